#include "vaeatk/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace vaeatk {

namespace {

using nlohmann::json;

constexpr const char* kMagic = "VAEATKCKPT1\n";

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::TConv: return "tconv";
    case LayerKind::Affine: return "affine";
    case LayerKind::Relu: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Reshape: return "reshape";
  }
  return "?";
}

LayerKind kind_from(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "tconv") return LayerKind::TConv;
  if (s == "affine") return LayerKind::Affine;
  if (s == "relu") return LayerKind::Relu;
  if (s == "sigmoid") return LayerKind::Sigmoid;
  if (s == "flatten") return LayerKind::Flatten;
  if (s == "reshape") return LayerKind::Reshape;
  throw IoError("checkpoint: unknown layer kind '" + s + "'");
}

json layer_to_json(const LayerSpec& l) {
  json j;
  j["kind"] = kind_name(l.kind);
  if (l.has_params()) {
    j["in"] = l.in_ch;
    j["out"] = l.out_ch;
  }
  if (l.kind == LayerKind::Conv || l.kind == LayerKind::TConv) {
    j["k"] = l.kernel;
    j["s"] = l.stride;
    j["p"] = l.pad;
  }
  if (l.kind == LayerKind::Reshape) {
    j["target"] = {l.target[0], l.target[1], l.target[2]};
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.kind = kind_from(j.at("kind").get<std::string>());
  if (l.has_params()) {
    l.in_ch = j.at("in").get<std::int64_t>();
    l.out_ch = j.at("out").get<std::int64_t>();
  }
  if (l.kind == LayerKind::Conv || l.kind == LayerKind::TConv) {
    l.kernel = j.at("k").get<int>();
    l.stride = j.at("s").get<int>();
    l.pad = j.at("p").get<int>();
  }
  if (l.kind == LayerKind::Reshape) {
    auto t = j.at("target");
    l.target = {t.at(0).get<std::int64_t>(), t.at(1).get<std::int64_t>(),
                t.at(2).get<std::int64_t>()};
  }
  return l;
}

json chain_to_json(const std::vector<LayerSpec>& chain) {
  json arr = json::array();
  for (const LayerSpec& l : chain) arr.push_back(layer_to_json(l));
  return arr;
}

std::vector<LayerSpec> chain_from_json(const json& arr) {
  std::vector<LayerSpec> out;
  for (const auto& j : arr) out.push_back(layer_from_json(j));
  return out;
}

json vae_spec_to_json(const VaeSpec& s) {
  json j;
  j["input_shape"] = s.input_shape;
  j["encoder"] = chain_to_json(s.encoder);
  j["mean_head"] = layer_to_json(s.mean_head);
  j["logvar_head"] = layer_to_json(s.logvar_head);
  j["decoder"] = chain_to_json(s.decoder);
  j["latent_dim"] = s.latent_dim;
  j["beta"] = s.beta;
  return j;
}

VaeSpec vae_spec_from_json(const json& j) {
  VaeSpec s;
  s.input_shape = j.at("input_shape").get<Shape>();
  s.encoder = chain_from_json(j.at("encoder"));
  s.mean_head = layer_from_json(j.at("mean_head"));
  s.logvar_head = layer_from_json(j.at("logvar_head"));
  s.decoder = chain_from_json(j.at("decoder"));
  s.latent_dim = j.at("latent_dim").get<std::int64_t>();
  s.beta = j.at("beta").get<double>();
  return s;
}

json hier_spec_to_json(const HierVaeSpec& s) {
  json j;
  j["input_shape"] = s.input_shape;
  j["latent_dims"] = s.latent_dims;
  j["feature_dims"] = s.feature_dims;
  j["prior_hidden"] = s.prior_hidden;
  j["decoder_hidden"] = s.decoder_hidden;
  return j;
}

HierVaeSpec hier_spec_from_json(const json& j) {
  HierVaeSpec s;
  s.input_shape = j.at("input_shape").get<Shape>();
  s.latent_dims = j.at("latent_dims").get<std::vector<std::int64_t>>();
  s.feature_dims = j.at("feature_dims").get<std::vector<std::int64_t>>();
  s.prior_hidden = j.at("prior_hidden").get<std::vector<std::int64_t>>();
  s.decoder_hidden = j.at("decoder_hidden").get<std::int64_t>();
  return s;
}

void write_payload(const std::string& path, const json& header, const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  std::string head = header.dump();
  std::uint64_t head_size = head.size();
  out.write(kMagic, static_cast<std::streamsize>(std::strlen(kMagic)));
  out.write(reinterpret_cast<const char*>(&head_size), sizeof(head_size));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& [name, t] : params.items()) {
    const auto& v = t.data();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw IoError("short write while saving checkpoint: " + path);
}

json make_header(const std::string& kind, json arch, const std::string& meta_json,
                 const ParamStore& params) {
  json header;
  header["format"] = kCheckpointFormat;
  header["kind"] = kind;
  header["arch"] = std::move(arch);
  header["meta"] = json::parse(meta_json);
  json dir = json::array();
  for (const auto& [name, t] : params.items()) {
    dir.push_back({{"name", name}, {"shape", t.shape()}});
  }
  header["tensors"] = dir;
  return header;
}

void read_params(std::ifstream& in, const json& dir, ParamStore& params,
                 const std::string& path) {
  if (dir.size() != params.items().size()) {
    throw IoError("checkpoint tensor directory does not match architecture: " + path);
  }
  std::size_t i = 0;
  for (auto& [name, t] : params.items_mut()) {
    const json& entry = dir.at(i++);
    if (entry.at("name").get<std::string>() != name ||
        entry.at("shape").get<Shape>() != t.shape()) {
      throw IoError("checkpoint tensor '" + entry.at("name").get<std::string>() +
                    "' does not match architecture: " + path);
    }
    auto& v = t.data_mut();
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint payload: " + path);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const VaeModel& model,
                     const std::string& meta_json) {
  json header = make_header("vae", vae_spec_to_json(model.spec()), meta_json, model.params());
  write_payload(path, header, model.params());
}

void save_checkpoint(const std::string& path, const HierarchicalVae& model,
                     const std::string& meta_json) {
  json header = make_header("hier", hier_spec_to_json(model.spec()), meta_json, model.params());
  write_payload(path, header, model.params());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string magic(std::strlen(kMagic), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kMagic) throw IoError("not a checkpoint file: " + path);
  std::uint64_t head_size = 0;
  in.read(reinterpret_cast<char*>(&head_size), sizeof(head_size));
  if (!in) throw IoError("truncated checkpoint header: " + path);
  std::string head(head_size, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_size));
  if (!in) throw IoError("truncated checkpoint header: " + path);

  json header = json::parse(head);
  if (header.at("format").get<std::string>() != kCheckpointFormat) {
    throw IoError("unsupported checkpoint format tag in " + path);
  }
  LoadedCheckpoint out;
  out.kind = header.at("kind").get<std::string>();
  out.meta_json = header.at("meta").dump();
  if (out.kind == "vae") {
    VaeModel model = VaeModel::init(vae_spec_from_json(header.at("arch")), 0);
    read_params(in, header.at("tensors"), model.params(), path);
    out.vae = std::move(model);
  } else if (out.kind == "hier") {
    HierarchicalVae model = HierarchicalVae::init(hier_spec_from_json(header.at("arch")), 0);
    read_params(in, header.at("tensors"), model.params(), path);
    out.hier = std::move(model);
  } else {
    throw IoError("unknown checkpoint kind '" + out.kind + "' in " + path);
  }
  return out;
}

}  // namespace vaeatk
