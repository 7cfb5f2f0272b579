#pragma once

// MOEC1 checkpoint format: 8-byte magic "MOEC\x01\0\0\0", a
// length-prefixed UTF-8 JSON header (config + ordered tensor index),
// then raw little-endian float32 payloads, row-major, in index order.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "moescope/model.hpp"

namespace moescope {

inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'E', 'C', 1, 0, 0, 0};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

using ordered_json = nlohmann::ordered_json;

inline ordered_json config_to_json(const ModelConfig& cfg) {
  ordered_json j;
  j["num_layers"] = cfg.num_layers;
  j["hidden_dim"] = cfg.hidden_dim;
  j["num_heads"] = cfg.num_heads;
  j["head_dim"] = cfg.head_dim;
  j["vocab_size"] = cfg.vocab_size;
  j["ffn_hidden_dim"] = cfg.ffn_hidden_dim;
  j["top_k"] = cfg.top_k;
  j["positional_mode"] =
      cfg.positional_mode == PositionalMode::kRotary ? "rotary" : "none";
  j["renormalize_topk"] = cfg.renormalize_topk;
  j["norm_epsilon"] = cfg.norm_epsilon;
  ordered_json layers = ordered_json::array();
  for (const LayerKind& lk : cfg.layers) {
    ordered_json lj;
    lj["experts"] = lk.num_experts;
    lj["shared"] = lk.has_shared_expert;
    layers.push_back(lj);
  }
  j["layers"] = layers;
  return j;
}

inline ModelConfig config_from_json(const ordered_json& j) {
  ModelConfig cfg;
  cfg.num_layers = j.at("num_layers").get<std::size_t>();
  cfg.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  cfg.num_heads = j.at("num_heads").get<std::size_t>();
  cfg.head_dim = j.at("head_dim").get<std::size_t>();
  cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
  cfg.ffn_hidden_dim = j.at("ffn_hidden_dim").get<std::size_t>();
  cfg.top_k = j.at("top_k").get<std::size_t>();
  const std::string pm = j.at("positional_mode").get<std::string>();
  if (pm == "rotary") {
    cfg.positional_mode = PositionalMode::kRotary;
  } else if (pm == "none") {
    cfg.positional_mode = PositionalMode::kNone;
  } else {
    throw CheckpointError("unknown positional_mode: " + pm);
  }
  cfg.renormalize_topk = j.at("renormalize_topk").get<bool>();
  cfg.norm_epsilon = j.at("norm_epsilon").get<float>();
  for (const auto& lj : j.at("layers")) {
    LayerKind lk;
    lk.num_experts = lj.at("experts").get<std::size_t>();
    lk.has_shared_expert = lj.at("shared").get<bool>();
    cfg.layers.push_back(lk);
  }
  return cfg;
}

inline Tensor2D gain_tensor(const std::vector<float>& g) {
  return Tensor2D(1, g.size(), g);
}

// Canonical tensor order for a model; also the payload order on disk.
template <typename Fn>
void for_each_tensor(const MoEModel& model, Fn&& fn) {
  fn("embedding", model.embedding);
  for (std::size_t l = 0; l < model.config.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const AttentionWeights& a = model.attn[l];
    fn(p + "attn.wq", a.wq);
    fn(p + "attn.wk", a.wk);
    fn(p + "attn.wv", a.wv);
    fn(p + "attn.wo", a.wo);
    fn(p + "attn.norm", gain_tensor(a.norm_gain));
    const LayerKind& lk = model.config.layers[l];
    const MoELayerWeights& m = model.ffn[l];
    if (lk.num_experts == 0) {
      fn(p + "ffn.wg", m.experts[0].wg);
      fn(p + "ffn.wu", m.experts[0].wu);
      fn(p + "ffn.wd", m.experts[0].wd);
      fn(p + "ffn.norm", gain_tensor(m.norm_gain));
    } else {
      fn(p + "moe.router", m.router);
      for (std::size_t e = 0; e < lk.num_experts; ++e) {
        const std::string ep = p + "moe.experts." + std::to_string(e) + ".";
        fn(ep + "wg", m.experts[e].wg);
        fn(ep + "wu", m.experts[e].wu);
        fn(ep + "wd", m.experts[e].wd);
      }
      if (m.shared) {
        fn(p + "moe.shared.wg", m.shared->wg);
        fn(p + "moe.shared.wu", m.shared->wu);
        fn(p + "moe.shared.wd", m.shared->wd);
      }
      fn(p + "moe.norm", gain_tensor(m.norm_gain));
    }
  }
  fn("final_norm", gain_tensor(model.final_norm_gain));
  fn("unembedding", model.unembedding);
}

}  // namespace detail

inline void save_checkpoint(const MoEModel& model, const std::string& path) {
  model.validate();
  detail::ordered_json header;
  header["config"] = detail::config_to_json(model.config);
  detail::ordered_json index = detail::ordered_json::array();
  std::uint64_t offset = 0;
  std::vector<Tensor2D> payload_order;
  detail::for_each_tensor(model, [&](const std::string& name, const Tensor2D& t) {
    detail::ordered_json e;
    e["name"] = name;
    e["rows"] = t.rows();
    e["cols"] = t.cols();
    e["offset"] = offset;
    index.push_back(e);
    offset += t.size() * sizeof(float);
    payload_order.push_back(t);
  });
  header["tensors"] = index;
  const std::string hs = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open for writing: " + tmp);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Tensor2D& t : payload_order) {
      out.write(reinterpret_cast<const char*>(t.data().data()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw CheckpointError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError("rename failed: " + path);
  }
}

inline MoEModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("bad magic: not a MOEC1 checkpoint");
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in) throw CheckpointError("truncated header length");
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw CheckpointError("truncated JSON header");

  detail::ordered_json header;
  try {
    header = detail::ordered_json::parse(hs);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("malformed JSON header: ") + e.what());
  }

  MoEModel model;
  model.config = detail::config_from_json(header.at("config"));
  if (model.config.hidden_dim != model.config.num_heads * model.config.head_dim) {
    throw CheckpointError("header validation: hidden_dim != num_heads * head_dim");
  }

  // Read payloads by the declared index, in order.
  struct Entry {
    std::string name;
    std::size_t rows, cols;
  };
  std::vector<Entry> entries;
  for (const auto& e : header.at("tensors")) {
    entries.push_back({e.at("name").get<std::string>(),
                       e.at("rows").get<std::size_t>(),
                       e.at("cols").get<std::size_t>()});
  }
  std::size_t next = 0;
  auto read_tensor = [&](const std::string& name, std::size_t rows,
                         std::size_t cols) -> Tensor2D {
    if (next >= entries.size() || entries[next].name != name) {
      throw CheckpointError("missing tensor in index: " + name);
    }
    if (entries[next].rows != rows || entries[next].cols != cols) {
      throw CheckpointError("shape mismatch for tensor " + name);
    }
    ++next;
    std::vector<float> data(rows * cols);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw CheckpointError("truncated payload for tensor " + name);
    for (float v : data) {
      if (!std::isfinite(v)) {
        throw CheckpointError("non-finite weight in tensor " + name);
      }
    }
    return Tensor2D(rows, cols, std::move(data));
  };

  const ModelConfig& cfg = model.config;
  const std::size_t d = cfg.hidden_dim;
  auto read_gain = [&](const std::string& name) {
    return read_tensor(name, 1, d).data();
  };
  model.embedding = read_tensor("embedding", cfg.vocab_size, d);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    AttentionWeights a;
    a.wq = read_tensor(p + "attn.wq", d, d);
    a.wk = read_tensor(p + "attn.wk", d, d);
    a.wv = read_tensor(p + "attn.wv", d, d);
    a.wo = read_tensor(p + "attn.wo", d, d);
    a.norm_gain = read_gain(p + "attn.norm");
    model.attn.push_back(std::move(a));

    const LayerKind& lk = cfg.layers[l];
    MoELayerWeights m;
    auto read_expert = [&](const std::string& ep) {
      ExpertWeights e;
      e.wg = read_tensor(ep + "wg", d, cfg.ffn_hidden_dim);
      e.wu = read_tensor(ep + "wu", d, cfg.ffn_hidden_dim);
      e.wd = read_tensor(ep + "wd", cfg.ffn_hidden_dim, d);
      return e;
    };
    if (lk.num_experts == 0) {
      m.experts.push_back(read_expert(p + "ffn."));
      m.norm_gain = read_gain(p + "ffn.norm");
    } else {
      m.router = read_tensor(p + "moe.router", d, lk.num_experts);
      for (std::size_t e = 0; e < lk.num_experts; ++e) {
        m.experts.push_back(
            read_expert(p + "moe.experts." + std::to_string(e) + "."));
      }
      if (lk.has_shared_expert) {
        m.shared = read_expert(p + "moe.shared.");
      }
      m.norm_gain = read_gain(p + "moe.norm");
    }
    model.ffn.push_back(std::move(m));
  }
  model.final_norm_gain = read_gain("final_norm");
  model.unembedding = read_tensor("unembedding", d, cfg.vocab_size);

  try {
    model.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("validation failed: ") + e.what());
  }
  return model;
}

}  // namespace moescope
