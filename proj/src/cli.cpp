#include "provae/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "provae/attack.hpp"
#include "provae/checkpoint.hpp"
#include "provae/image.hpp"
#include "provae/robust.hpp"

namespace provae::cli {

namespace {

constexpr std::uint64_t kBlobTrainSeed = 17;
constexpr std::uint64_t kBlobTestSeed = 29;
constexpr std::size_t kBlobTrainDefault = 1000;
constexpr std::size_t kBlobTestDefault = 256;

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  auto out = open_output(path);
  out << "epoch,lb_train,lb_test,elbo_test\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << num(r.lb_train) << ',' << num(r.lb_test) << ','
        << num(r.elbo_test) << '\n';
}

Dataset test_split(const Checkpoint& ck, const std::string& dir_override, std::size_t n) {
  const std::string dir = dir_override.empty() ? ck.info.data_dir : dir_override;
  auto [train, test] = load_data(ck.info.data, dir, 1, n, ck.info.blob_side);
  return test;
}

}  // namespace

std::pair<Dataset, Dataset> load_data(const std::string& kind, const std::string& dir,
                                      std::size_t limit, std::size_t test_limit,
                                      std::size_t side) {
  const std::filesystem::path root(dir);
  if (kind == "blobs") {
    Dataset train = synthetic_blobs(limit ? limit : kBlobTrainDefault, side, kBlobTrainSeed);
    Dataset test = synthetic_blobs(test_limit ? test_limit : kBlobTestDefault, side, kBlobTestSeed);
    train.split = "train";
    test.split = "test";
    return {std::move(train), std::move(test)};
  }
  auto require = [](const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw std::runtime_error("missing data file " + p.string());
    return p;
  };
  if (kind == "mnist") {
    Dataset train = load_idx(require(root / "train-images-idx3-ubyte"), limit);
    Dataset test = load_idx(require(root / "t10k-images-idx3-ubyte"), test_limit);
    train.name = test.name = "mnist";
    train.split = "train";
    test.split = "test";
    return {std::move(train), std::move(test)};
  }
  if (kind == "cifar10") {
    Dataset train;
    for (int b = 1; b <= 5; ++b) {
      const auto p = root / ("data_batch_" + std::to_string(b) + ".bin");
      if (!std::filesystem::exists(p)) continue;
      Dataset part = load_cifar10_batch(p);
      if (train.empty()) train.image_shape = part.image_shape;
      for (auto& img : part.images) train.images.push_back(std::move(img));
    }
    if (train.empty()) throw std::runtime_error("no CIFAR10 data_batch_*.bin in " + dir);
    train = take(train, limit);
    Dataset test = load_cifar10_batch(require(root / "test_batch.bin"), test_limit);
    train.name = test.name = "cifar10";
    train.split = "train";
    test.split = "test";
    return {std::move(train), std::move(test)};
  }
  throw std::runtime_error("unknown dataset '" + kind + "' (expected mnist, blobs or cifar10)");
}

void cmd_train(const TrainOptions& opts, std::ostream& log) {
  if (opts.out.empty()) throw std::runtime_error("--out is required");
  auto [train, test] = load_data(opts.data, opts.data_dir, opts.limit, opts.test_limit, opts.side);

  Architecture arch;
  arch.preset = opts.preset;
  arch.data_shape = train.image_shape;
  arch.latent_dim = opts.latent;
  arch.hidden = opts.hidden;
  arch.filters1 = opts.filters1;
  arch.filters2 = opts.filters2;
  VaeModel model = build_vae(arch, opts.sigma0, opts.seed);

  TrainConfig cfg;
  cfg.eps_train = opts.eps_train;
  cfg.epochs = opts.epochs;
  cfg.batch_size = opts.batch;
  cfg.learning_rate = opts.lr;
  cfg.seed = opts.seed;
  cfg.optimizer = parse_optimizer(opts.optimizer);
  if (opts.eps_warmup > 0) cfg.eps_schedule = linear_eps_ramp(opts.eps_train, opts.eps_warmup);
  Trainer trainer(model, cfg);

  CheckpointInfo info;
  info.eps_train = opts.eps_train;
  info.seed = opts.seed;
  info.data = opts.data;
  info.data_dir = opts.data == "blobs" ? "" : opts.data_dir;
  info.blob_side = opts.data == "blobs" ? opts.side : 0;

  std::error_code ec;
  std::filesystem::create_directories(opts.out, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + opts.out.string());

  log << "training " << opts.preset << " VAE on " << train.size() << " " << opts.data
      << " images, eps_train=" << opts.eps_train << ", " << parameter_count(model)
      << " parameters\n";
  for (std::size_t e = 0; e < opts.epochs; ++e) {
    const EpochMetrics m = trainer.train_epoch(train);
    const EvalMetrics t = evaluate(model, test, opts.eps_train, opts.seed + 7919);
    info.history.push_back({e + 1, m.mean_lower_bound, t.mean_lower_bound, t.mean_elbo});
    info.epoch = e + 1;
    save_checkpoint(opts.out, model, info);
    write_metrics(opts.out / "metrics.csv", info.history);
    log << "epoch " << e + 1 << "  lb_train " << num(m.mean_lower_bound) << "  lb_test "
        << num(t.mean_lower_bound) << "  elbo_test " << num(t.mean_elbo) << '\n';
  }
}

void cmd_attack(const AttackOptions& opts, std::ostream& log) {
  if (opts.report.empty()) throw std::runtime_error("--report is required");
  const Checkpoint ck = load_checkpoint(opts.ckpt);
  const Dataset test = test_split(ck, opts.data_dir, opts.n_samples);
  AttackConfig cfg;
  cfg.steps = opts.steps;
  cfg.step_size = opts.step_size;
  cfg.n_noise = opts.n_noise;
  cfg.restarts = opts.restarts;
  cfg.seed = opts.seed;
  const AttackReport report = attack_sweep(ck.model, test, opts.eps_list, cfg);

  auto csv = open_output(opts.report);
  csv << "eps_attack,mean_elbo,std_elbo,n\n";
  for (const auto& p : report.points)
    csv << num(p.eps_attack) << ',' << num(p.mean_elbo) << ',' << num(p.std_elbo) << ',' << p.n
        << '\n';

  nlohmann::json summary;
  summary["checkpoint"] = opts.ckpt.string();
  summary["eps_train"] = ck.info.eps_train;
  summary["steps"] = opts.steps;
  summary["n_noise"] = opts.n_noise;
  summary["restarts"] = opts.restarts;
  summary["seed"] = opts.seed;
  summary["n_samples"] = test.size();
  summary["all_feasible"] = report.all_feasible;
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : report.points) {
    double worst = 0;
    for (const auto& s : p.samples) worst = std::max(worst, s.delta_linf);
    points.push_back({{"eps_attack", p.eps_attack},
                      {"step_size", opts.step_size ? *opts.step_size
                                                   : 2.5 * p.eps_attack /
                                                         static_cast<double>(opts.steps)},
                      {"mean_elbo", p.mean_elbo},
                      {"std_elbo", p.std_elbo},
                      {"max_delta_linf", worst},
                      {"n", p.n}});
  }
  summary["points"] = points;
  auto js = open_output(std::filesystem::path(opts.report).replace_extension(".json"));
  js << summary.dump(2) << '\n';

  log << "attack on checkpoint trained at eps_train=" << ck.info.eps_train << '\n';
  for (const auto& p : report.points)
    log << "eps_attack " << num(p.eps_attack) << "  mean_elbo " << num(p.mean_elbo) << "  std "
        << num(p.std_elbo) << '\n';
}

CertifySummary cmd_certify(const CertifyOptions& opts, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(opts.ckpt);
  const Dataset test = test_split(ck, opts.data_dir, opts.n_samples);
  CertifySummary summary;
  std::ostringstream rows;
  rows << "index,bound,spread,certified\n";
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Certificate c =
        certify(ck.model, test.images[i], opts.eps, opts.alpha, opts.n_noise, opts.seed + i);
    rows << i << ',' << num(c.bound) << ',' << num(c.spread) << ',' << (c.certified ? 1 : 0)
         << '\n';
    summary.certified += c.certified ? 1 : 0;
    ++summary.total;
  }
  if (!opts.report.empty()) open_output(opts.report) << rows.str();
  log << "certified " << summary.certified << "/" << summary.total << " ("
      << num(100.0 * summary.fraction()) << "%) at eps=" << opts.eps << ", alpha=" << opts.alpha
      << '\n';
  return summary;
}

void cmd_sample(const ImageOptions& opts, std::ostream& log) {
  if (opts.out.empty()) throw std::runtime_error("--out is required");
  const Checkpoint ck = load_checkpoint(opts.ckpt);
  const auto images = sample(ck.model, opts.n, opts.seed);
  if (opts.out.has_parent_path()) std::filesystem::create_directories(opts.out.parent_path());
  write_pgm(opts.out, montage(images));
  log << "wrote " << images.size() << " samples to " << opts.out.string() << '\n';
}

void cmd_reconstruct(const ImageOptions& opts, std::ostream& log) {
  if (opts.out.empty()) throw std::runtime_error("--out is required");
  const Checkpoint ck = load_checkpoint(opts.ckpt);
  const Dataset test = test_split(ck, opts.data_dir, opts.n);
  std::vector<std::size_t> idx(test.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Tensor x = gather(test, idx);

  AttackConfig cfg;
  cfg.eps_attack = opts.attacked ? opts.eps : 0.0;
  cfg.steps = opts.steps;
  cfg.seed = opts.seed;
  const PgdResult attack = pgd_ood_attack(ck.model, x, cfg);
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] += attack.delta[i];

  const EncodedValues enc = encode_values(ck.model, x);
  const Tensor recon = decode_values(ck.model, enc.mu);
  std::vector<Tensor> tiles;
  for (std::size_t i = 0; i < idx.size(); ++i) tiles.push_back(unstack_row(x, i));
  for (std::size_t i = 0; i < idx.size(); ++i) tiles.push_back(unstack_row(recon, i));
  if (opts.out.has_parent_path()) std::filesystem::create_directories(opts.out.parent_path());
  write_pgm(opts.out, montage(tiles, idx.size()));

  double clean = 0, attacked = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    clean += attack.objective_clean[i];
    attacked += attack.objective_attacked[i];
  }
  const double n = static_cast<double>(idx.size());
  log << "mean ELBO clean " << num(clean / n);
  if (opts.attacked) log << "  attacked (eps " << opts.eps << ") " << num(attacked / n);
  log << "\nwrote reconstructions to " << opts.out.string() << '\n';
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Certifiably robust variational auto-encoders"};
  app.require_subcommand(1);

  TrainOptions train;
  auto* t = app.add_subcommand("train", "train by maximizing the certified ELBO lower bound");
  t->add_option("--data", train.data, "mnist | blobs | cifar10")
      ->check(CLI::IsMember({"mnist", "blobs", "cifar10"}));
  t->add_option("--data-dir", train.data_dir, "directory holding the dataset files");
  t->add_option("--eps-train", train.eps_train, "l-infinity training radius")
      ->check(CLI::NonNegativeNumber);
  t->add_option("--epochs", train.epochs);
  t->add_option("--batch", train.batch)->check(CLI::PositiveNumber);
  t->add_option("--lr", train.lr)->check(CLI::PositiveNumber);
  t->add_option("--latent", train.latent)->check(CLI::PositiveNumber);
  t->add_option("--sigma0", train.sigma0)->check(CLI::PositiveNumber);
  t->add_option("--seed", train.seed);
  t->add_option("--limit", train.limit, "cap on training images");
  t->add_option("--test-limit", train.test_limit, "cap on test images");
  t->add_option("--out", train.out, "checkpoint directory")->required();
  t->add_option("--preset", train.preset)->check(CLI::IsMember({"dense", "conv"}));
  t->add_option("--hidden", train.hidden, "dense preset width")->check(CLI::PositiveNumber);
  t->add_option("--filters1", train.filters1)->check(CLI::PositiveNumber);
  t->add_option("--filters2", train.filters2)->check(CLI::PositiveNumber);
  t->add_option("--side", train.side, "blob image side")->check(CLI::Range(4, 4096));
  t->add_option("--optimizer", train.optimizer)
      ->check(CLI::IsMember({"sgd", "momentum", "adam"}));
  t->add_option("--eps-warmup", train.eps_warmup, "epochs of linear eps ramp (0: constant)");

  AttackOptions attack;
  std::string eps_list = "0";
  double step_size = -1;
  auto* a = app.add_subcommand("attack", "PGD out-of-distribution attack sweep");
  a->add_option("--ckpt", attack.ckpt)->required();
  a->add_option("--eps-list", eps_list, "ascending comma-separated radii");
  a->add_option("--steps", attack.steps)->check(CLI::PositiveNumber);
  a->add_option("--step-size", step_size, "default 2.5 * eps / steps");
  a->add_option("--n-samples", attack.n_samples)->check(CLI::PositiveNumber);
  a->add_option("--n-noise", attack.n_noise)->check(CLI::PositiveNumber);
  a->add_option("--restarts", attack.restarts);
  a->add_option("--seed", attack.seed);
  a->add_option("--report", attack.report, "CSV path; a JSON summary is written beside it")
      ->required();
  a->add_option("--data-dir", attack.data_dir);

  CertifyOptions certify_opts;
  auto* c = app.add_subcommand("certify", "certify test samples at radius eps");
  c->add_option("--ckpt", certify_opts.ckpt)->required();
  c->add_option("--eps", certify_opts.eps)->check(CLI::NonNegativeNumber);
  c->add_option("--alpha", certify_opts.alpha);
  c->add_option("--n-noise", certify_opts.n_noise)->check(CLI::PositiveNumber);
  c->add_option("--n-samples", certify_opts.n_samples)->check(CLI::PositiveNumber);
  c->add_option("--seed", certify_opts.seed);
  c->add_option("--report", certify_opts.report, "per-sample CSV");
  c->add_option("--data-dir", certify_opts.data_dir);

  ImageOptions sample_opts;
  auto* s = app.add_subcommand("sample", "decode latents drawn from N(0, I) into a PGM grid");
  s->add_option("--ckpt", sample_opts.ckpt)->required();
  s->add_option("--n", sample_opts.n)->check(CLI::PositiveNumber);
  s->add_option("--out", sample_opts.out)->required();
  s->add_option("--seed", sample_opts.seed);

  ImageOptions recon_opts;
  recon_opts.n = 8;
  auto* r = app.add_subcommand("reconstruct", "reconstruct (optionally attacked) test samples");
  r->add_option("--ckpt", recon_opts.ckpt)->required();
  r->add_option("--n", recon_opts.n)->check(CLI::PositiveNumber);
  r->add_option("--out", recon_opts.out)->required();
  r->add_option("--seed", recon_opts.seed);
  r->add_flag("--attacked", recon_opts.attacked);
  r->add_option("--eps", recon_opts.eps)->check(CLI::NonNegativeNumber);
  r->add_option("--steps", recon_opts.steps)->check(CLI::PositiveNumber);
  r->add_option("--data-dir", recon_opts.data_dir);

  std::vector<std::string> argv_store{"provae"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s_ : argv_store) argv.push_back(s_.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (t->parsed()) {
      cmd_train(train, out);
    } else if (a->parsed()) {
      attack.eps_list.clear();
      std::stringstream ss(eps_list);
      for (std::string item; std::getline(ss, item, ',');) attack.eps_list.push_back(std::stod(item));
      if (step_size >= 0) attack.step_size = step_size;
      cmd_attack(attack, out);
    } else if (c->parsed()) {
      cmd_certify(certify_opts, out);
    } else if (s->parsed()) {
      cmd_sample(sample_opts, out);
    } else if (r->parsed()) {
      cmd_reconstruct(recon_opts, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace provae::cli
