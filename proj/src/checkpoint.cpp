#include "provae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace provae {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in native little-endian order");

std::string blob_name(const std::string& param) { return param + ".bin"; }

void write_blob(const std::filesystem::path& path, const Tensor& t) {
  std::vector<float> buf(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) buf[i] = static_cast<float>(t[i]);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

void read_blob(const std::filesystem::path& path, const std::string& name, Tensor& t) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("missing parameter blob " + path.filename().string());
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() != t.numel() * sizeof(float))
    throw CheckpointError("parameter " + name + ": blob holds " + std::to_string(bytes.size()) +
                          " bytes, shape " + t.shape().str() + " needs " +
                          std::to_string(t.numel() * sizeof(float)));
  std::vector<float> buf(t.numel());
  std::memcpy(buf.data(), bytes.data(), bytes.size());
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(buf[i]);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const VaeModel& model,
                     const CheckpointInfo& info) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw CheckpointError("cannot create checkpoint directory " + dir.string());

  json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["architecture"] = {
      {"preset", model.arch.preset},       {"data_shape", model.arch.data_shape.dims()},
      {"latent_dim", model.arch.latent_dim}, {"hidden", model.arch.hidden},
      {"filters1", model.arch.filters1},   {"filters2", model.arch.filters2},
  };
  manifest["sigma0"] = model.sigma0;
  manifest["eps_train"] = info.eps_train;
  manifest["seed"] = info.seed;
  manifest["epoch"] = info.epoch;
  manifest["data"] = {{"kind", info.data}, {"dir", info.data_dir}, {"blob_side", info.blob_side}};
  json history = json::array();
  for (const auto& row : info.history)
    history.push_back({{"epoch", row.epoch},
                       {"lb_train", row.lb_train},
                       {"lb_test", row.lb_test},
                       {"elbo_test", row.elbo_test}});
  manifest["metric_history"] = history;

  json params = json::array();
  for (const auto& p : named_parameters(const_cast<VaeModel&>(model))) {
    params.push_back({{"name", p.name}, {"shape", p.tensor->shape().dims()},
                      {"file", blob_name(p.name)}});
    write_blob(dir / blob_name(p.name), *p.tensor);
  }
  manifest["parameters"] = params;

  std::ofstream out(dir / "manifest.json");
  if (!out) throw CheckpointError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError("no manifest.json in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw CheckpointError("unreadable manifest in " + dir.string() + ": " + e.what());
  }
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw CheckpointError("checkpoint format version " + std::to_string(version) +
                            " is not the supported version " +
                            std::to_string(kCheckpointFormatVersion));
    const json& a = manifest.at("architecture");
    Architecture arch;
    arch.preset = a.at("preset").get<std::string>();
    arch.data_shape = Shape(a.at("data_shape").get<std::vector<std::size_t>>());
    arch.latent_dim = a.at("latent_dim").get<std::size_t>();
    arch.hidden = a.at("hidden").get<std::size_t>();
    arch.filters1 = a.at("filters1").get<std::size_t>();
    arch.filters2 = a.at("filters2").get<std::size_t>();

    Checkpoint ck{build_vae(arch, manifest.at("sigma0").get<double>(), 0), {}};
    ck.info.eps_train = manifest.at("eps_train").get<double>();
    ck.info.seed = manifest.at("seed").get<std::uint64_t>();
    ck.info.epoch = manifest.at("epoch").get<std::size_t>();
    const json& d = manifest.at("data");
    ck.info.data = d.at("kind").get<std::string>();
    ck.info.data_dir = d.at("dir").get<std::string>();
    ck.info.blob_side = d.at("blob_side").get<std::size_t>();
    for (const auto& row : manifest.at("metric_history"))
      ck.info.history.push_back({row.at("epoch").get<std::size_t>(),
                                 row.at("lb_train").get<double>(),
                                 row.at("lb_test").get<double>(),
                                 row.at("elbo_test").get<double>()});

    auto params = named_parameters(ck.model);
    const json& listed = manifest.at("parameters");
    if (listed.size() != params.size())
      throw CheckpointError("manifest lists " + std::to_string(listed.size()) +
                            " parameters, architecture has " + std::to_string(params.size()));
    for (std::size_t k = 0; k < params.size(); ++k) {
      const std::string name = listed[k].at("name").get<std::string>();
      const Shape shape(listed[k].at("shape").get<std::vector<std::size_t>>());
      if (name != params[k].name || shape != params[k].tensor->shape())
        throw CheckpointError("parameter " + name + " " + shape.str() +
                              " does not match architecture parameter " + params[k].name + " " +
                              params[k].tensor->shape().str());
      read_blob(dir / listed[k].at("file").get<std::string>(), name, *params[k].tensor);
    }
    return ck;
  } catch (const json::exception& e) {
    throw CheckpointError("malformed manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace provae
