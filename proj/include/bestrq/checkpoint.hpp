#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "bestrq/common.hpp"
#include "bestrq/encoder.hpp"
#include "bestrq/features.hpp"
#include "bestrq/metrics.hpp"
#include "bestrq/quantizer.hpp"
#include "bestrq/vqvae.hpp"

namespace bestrq {

// ---- shared binary blob helpers ---------------------------------------------

namespace blob {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  require(static_cast<bool>(is), Errc::corrupt_file, std::string("truncated while reading ") + what);
  return v;
}
inline std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  require(static_cast<bool>(is), Errc::corrupt_file, std::string("truncated while reading ") + what);
  return v;
}
inline std::string read_string(std::istream& is, const char* what) {
  const std::uint32_t len = read_u32(is, what);
  require(len < (1u << 28), Errc::corrupt_file, std::string("implausible length for ") + what);
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  require(static_cast<bool>(is), Errc::corrupt_file, std::string("truncated while reading ") + what);
  return s;
}

inline void write_named_tensors(std::ostream& os,
                                const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors) {
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_string(os, name);
    write_u32(os, static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) write_u64(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t->data()),
             static_cast<std::streamsize>(t->numel() * 4));
  }
}

inline std::map<std::string, Tensor<float>> read_named_tensors(std::istream& is) {
  std::map<std::string, Tensor<float>> out;
  const std::uint32_t count = read_u32(is, "tensor count");
  require(count < (1u << 20), Errc::corrupt_file, "implausible tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(is, "tensor name");
    const std::uint32_t rank = read_u32(is, "tensor rank");
    require(rank >= 1 && rank <= 4, Errc::corrupt_file, "implausible tensor rank");
    std::vector<std::int64_t> shape;
    for (std::uint32_t r = 0; r < rank; ++r)
      shape.push_back(static_cast<std::int64_t>(read_u64(is, "tensor dim")));
    Tensor<float> t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
    require(static_cast<bool>(is), Errc::corrupt_file, "truncated tensor payload: " + name);
    out.emplace(name, std::move(t));
  }
  return out;
}

/// FNV-1a, used to tie a tensor payload to the config it was trained under.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace blob

// ---- config <-> json ----------------------------------------------------------

inline nlohmann::json context_mode_to_json(const ContextMode& m) {
  const char* kind = m.kind == ContextKind::full      ? "full"
                     : m.kind == ContextKind::causal  ? "causal"
                                                      : "causal_lookahead";
  return {{"kind", kind}, {"left_window", m.left_window}, {"right_window", m.right_window}};
}

inline ContextMode context_mode_from_json(const nlohmann::json& j) {
  ContextMode m;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "full")
    m.kind = ContextKind::full;
  else if (kind == "causal")
    m.kind = ContextKind::causal;
  else if (kind == "causal_lookahead")
    m.kind = ContextKind::causal_lookahead;
  else
    fail(Errc::invalid_config, "unknown context kind: " + kind);
  m.left_window = j.at("left_window").get<std::int64_t>();
  m.right_window = j.at("right_window").get<std::int64_t>();
  m.validate();
  return m;
}

inline nlohmann::json encoder_config_to_json(const EncoderConfig& cfg) {
  return {{"num_layers", cfg.num_layers}, {"d_model", cfg.d_model},
          {"num_heads", cfg.num_heads},   {"ffn_dim", cfg.ffn_dim},
          {"input_dim", cfg.input_dim},   {"vocab_size", cfg.vocab_size},
          {"context", context_mode_to_json(cfg.context)}, {"seed", cfg.seed}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  cfg.num_layers = j.at("num_layers").get<std::int64_t>();
  cfg.d_model = j.at("d_model").get<std::int64_t>();
  cfg.num_heads = j.at("num_heads").get<std::int64_t>();
  cfg.ffn_dim = j.at("ffn_dim").get<std::int64_t>();
  cfg.input_dim = j.at("input_dim").get<std::int64_t>();
  cfg.vocab_size = j.at("vocab_size").get<std::int64_t>();
  cfg.context = context_mode_from_json(j.at("context"));
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

inline std::uint64_t encoder_config_hash(const EncoderConfig& cfg) {
  return blob::fnv1a(encoder_config_to_json(cfg).dump());
}

inline nlohmann::json metrics_row_to_json(const MetricsRow& row) {
  nlohmann::json j;
  j["step"] = row.step;
  j["loss"] = row.loss;
  if (row.accuracy_defined) j["masked_accuracy"] = row.masked_accuracy;
  if (row.utilization_defined) {
    j["codes_used_fraction"] = row.codes_used_fraction;
    j["normalized_entropy"] = row.normalized_entropy;
  }
  j["learning_rate"] = row.learning_rate;
  return j;
}

inline MetricsRow metrics_row_from_json(const nlohmann::json& j) {
  MetricsRow row;
  row.step = j.at("step").get<std::int64_t>();
  row.loss = j.at("loss").get<double>();
  if (j.contains("masked_accuracy")) {
    row.accuracy_defined = true;
    row.masked_accuracy = j["masked_accuracy"].get<double>();
  }
  if (j.contains("codes_used_fraction")) {
    row.utilization_defined = true;
    row.codes_used_fraction = j["codes_used_fraction"].get<double>();
    row.normalized_entropy = j["normalized_entropy"].get<double>();
  }
  row.learning_rate = j.at("learning_rate").get<double>();
  return row;
}

// ---- checkpoint ----------------------------------------------------------------

/// Versioned training snapshot: encoder config + params, the quantizer spec
/// that produced the targets, step, a metrics snapshot, and the corpus
/// normalization stats the run was trained under (fine-tuning reuses them).
struct Checkpoint {
  std::uint32_t version = 1;
  EncoderConfig encoder_cfg;
  EncoderParams<float> params;
  nlohmann::json quantizer_spec;
  std::int64_t step = 0;
  MetricsRow last_metrics;
  CorpusStats stats;
};

namespace detail {
constexpr char kCheckpointMagic[4] = {'B', 'R', 'Q', 'C'};
constexpr char kTrailerMagic[4] = {'E', 'N', 'D', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), Errc::io_error, "cannot write checkpoint: " + path.string());
  os.write(detail::kCheckpointMagic, 4);
  blob::write_u32(os, detail::kCheckpointVersion);

  nlohmann::json meta;
  meta["encoder"] = encoder_config_to_json(ckpt.encoder_cfg);
  meta["quantizer"] = ckpt.quantizer_spec;
  meta["step"] = ckpt.step;
  meta["metrics"] = metrics_row_to_json(ckpt.last_metrics);
  meta["stats"] = {{"mean", ckpt.stats.mean}, {"std", ckpt.stats.std}};
  blob::write_string(os, meta.dump());
  blob::write_u64(os, encoder_config_hash(ckpt.encoder_cfg));

  std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
  for (std::size_t i = 0; i < ckpt.params.core.set.size(); ++i)
    tensors.emplace_back("core." + ckpt.params.core.set.names[i], &ckpt.params.core.set.tensors[i]);
  for (std::size_t i = 0; i < ckpt.params.head.set.size(); ++i)
    tensors.emplace_back("head." + ckpt.params.head.set.names[i], &ckpt.params.head.set.tensors[i]);
  blob::write_named_tensors(os, tensors);
  os.write(detail::kTrailerMagic, 4);
  require(static_cast<bool>(os), Errc::io_error, "checkpoint write failed: " + path.string());
}

/// Loads and validates a checkpoint. When `expected_cfg` is given, its config
/// hash must match the stored one (loading into a mismatched encoder is a
/// config-hash error, not a silent reshape).
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const EncoderConfig* expected_cfg = nullptr) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), Errc::io_error, "cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  require(static_cast<bool>(is) && std::memcmp(magic, detail::kCheckpointMagic, 4) == 0,
          Errc::corrupt_file, "bad checkpoint magic: " + path.string());
  const std::uint32_t version = blob::read_u32(is, "checkpoint version");
  require(version == detail::kCheckpointVersion, Errc::version_mismatch,
          "checkpoint version " + std::to_string(version) + " unsupported");

  const std::string meta_str = blob::read_string(is, "checkpoint meta");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupt_file, std::string("checkpoint meta unparseable: ") + e.what());
  }

  Checkpoint ckpt;
  ckpt.version = version;
  ckpt.encoder_cfg = encoder_config_from_json(meta.at("encoder"));
  ckpt.quantizer_spec = meta.at("quantizer");
  ckpt.step = meta.at("step").get<std::int64_t>();
  ckpt.last_metrics = metrics_row_from_json(meta.at("metrics"));
  ckpt.stats.mean = meta.at("stats").at("mean").get<std::vector<double>>();
  ckpt.stats.std = meta.at("stats").at("std").get<std::vector<double>>();

  const std::uint64_t stored_hash = blob::read_u64(is, "config hash");
  require(stored_hash == encoder_config_hash(ckpt.encoder_cfg), Errc::corrupt_file,
          "stored config hash does not match embedded config");
  if (expected_cfg)
    require(stored_hash == encoder_config_hash(*expected_cfg), Errc::config_hash_mismatch,
            "checkpoint was trained under a different encoder config");

  auto tensors = blob::read_named_tensors(is);
  char trailer[4];
  is.read(trailer, 4);
  require(static_cast<bool>(is) && std::memcmp(trailer, detail::kTrailerMagic, 4) == 0,
          Errc::corrupt_file, "checkpoint trailer missing: " + path.string());

  ckpt.params = init_encoder<float>(ckpt.encoder_cfg);
  auto fill = [&](ParamSet<float>& set, const std::string& prefix) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      const std::string key = prefix + set.names[i];
      auto it = tensors.find(key);
      require(it != tensors.end(), Errc::corrupt_file, "checkpoint missing tensor: " + key);
      require(it->second.same_shape(set.tensors[i]), Errc::corrupt_file,
              "checkpoint tensor shape mismatch: " + key);
      set.tensors[i] = std::move(it->second);
    }
  };
  fill(ckpt.params.core.set, "core.");
  fill(ckpt.params.head.set, "head.");
  return ckpt;
}

// ---- quantizer files ------------------------------------------------------------

namespace detail {
constexpr char kQuantizerMagic[4] = {'B', 'R', 'Q', 'Q'};
constexpr std::uint32_t kQuantizerVersion = 1;
}  // namespace detail

inline nlohmann::json rpq_spec_json(const RandomProjectionQuantizer& q) {
  return {{"kind", "rpq"},           {"input_dim", q.input_dim()}, {"code_dim", q.code_dim()},
          {"vocab_size", q.vocab_size()}, {"seed", q.seed()},      {"l2_normalize", q.l2_normalized()}};
}

inline nlohmann::json vqvae_config_to_json(const VqVaeConfig& cfg) {
  return {{"kind", "vqvae"},
          {"variant", vqvae_variant_name(cfg.variant)},
          {"input_dim", cfg.input_dim},
          {"code_dim", cfg.code_dim},
          {"codebook_size", cfg.codebook_size},
          {"l2_normalize", cfg.l2_normalize},
          {"num_layers", cfg.num_layers},
          {"d_model", cfg.d_model},
          {"num_heads", cfg.num_heads},
          {"ffn_dim", cfg.ffn_dim},
          {"learning_rate", cfg.learning_rate},
          {"commitment_beta", cfg.commitment_beta},
          {"steps", cfg.steps},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed}};
}

inline VqVaeConfig vqvae_config_from_json(const nlohmann::json& j) {
  VqVaeConfig cfg;
  const std::string variant = j.at("variant").get<std::string>();
  if (variant == "projection")
    cfg.variant = VqVaeVariant::projection;
  else if (variant == "transformer")
    cfg.variant = VqVaeVariant::transformer;
  else
    fail(Errc::invalid_config, "unknown vqvae variant: " + variant);
  cfg.input_dim = j.at("input_dim").get<std::int64_t>();
  cfg.code_dim = j.at("code_dim").get<std::int64_t>();
  cfg.codebook_size = j.at("codebook_size").get<std::int64_t>();
  cfg.l2_normalize = j.at("l2_normalize").get<bool>();
  cfg.num_layers = j.at("num_layers").get<std::int64_t>();
  cfg.d_model = j.at("d_model").get<std::int64_t>();
  cfg.num_heads = j.at("num_heads").get<std::int64_t>();
  cfg.ffn_dim = j.at("ffn_dim").get<std::int64_t>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.commitment_beta = j.at("commitment_beta").get<double>();
  cfg.steps = j.at("steps").get<std::int64_t>();
  cfg.batch_size = j.at("batch_size").get<std::int64_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

inline std::vector<std::pair<std::string, const Tensor<float>*>> vqvae_named_tensors(
    const VqVaeQuantizer& q) {
  std::vector<std::pair<std::string, const Tensor<float>*>> out;
  if (q.encoder.has_core)
    for (std::size_t i = 0; i < q.encoder.core.set.size(); ++i)
      out.emplace_back("enc_core." + q.encoder.core.set.names[i], &q.encoder.core.set.tensors[i]);
  for (std::size_t i = 0; i < q.encoder.proj.set.size(); ++i)
    out.emplace_back("enc." + q.encoder.proj.set.names[i], &q.encoder.proj.set.tensors[i]);
  out.emplace_back("codebook", &q.codebook);
  if (q.decoder.has_core)
    for (std::size_t i = 0; i < q.decoder.core.set.size(); ++i)
      out.emplace_back("dec_core." + q.decoder.core.set.names[i], &q.decoder.core.set.tensors[i]);
  for (std::size_t i = 0; i < q.decoder.proj.set.size(); ++i)
    out.emplace_back("dec." + q.decoder.proj.set.names[i], &q.decoder.proj.set.tensors[i]);
  return out;
}

/// A frozen RPQ serializes as its spec only (it reconstructs bit-exactly from
/// the seed); a trained VQ-VAE carries all its matrices.
inline void save_rpq(const RandomProjectionQuantizer& q, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), Errc::io_error, "cannot write quantizer: " + path.string());
  os.write(detail::kQuantizerMagic, 4);
  blob::write_u32(os, detail::kQuantizerVersion);
  blob::write_string(os, rpq_spec_json(q).dump());
  blob::write_u32(os, 0);  // no tensors
  os.write(detail::kTrailerMagic, 4);
  require(static_cast<bool>(os), Errc::io_error, "quantizer write failed");
}

inline void save_vqvae(const VqVaeQuantizer& q, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), Errc::io_error, "cannot write quantizer: " + path.string());
  os.write(detail::kQuantizerMagic, 4);
  blob::write_u32(os, detail::kQuantizerVersion);
  nlohmann::json meta = vqvae_config_to_json(q.cfg);
  meta["trained_steps"] = q.trained_steps;
  blob::write_string(os, meta.dump());
  blob::write_named_tensors(os, vqvae_named_tensors(q));
  os.write(detail::kTrailerMagic, 4);
  require(static_cast<bool>(os), Errc::io_error, "quantizer write failed");
}

struct LoadedQuantizer {
  bool is_rpq = false;
  std::unique_ptr<RandomProjectionQuantizer> rpq;
  std::unique_ptr<VqVaeQuantizer> vqvae;
};

inline LoadedQuantizer load_quantizer(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), Errc::io_error, "cannot open quantizer: " + path.string());
  char magic[4];
  is.read(magic, 4);
  require(static_cast<bool>(is) && std::memcmp(magic, detail::kQuantizerMagic, 4) == 0,
          Errc::corrupt_file, "bad quantizer magic: " + path.string());
  const std::uint32_t version = blob::read_u32(is, "quantizer version");
  require(version == detail::kQuantizerVersion, Errc::version_mismatch,
          "quantizer version " + std::to_string(version) + " unsupported");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(blob::read_string(is, "quantizer meta"));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::corrupt_file, std::string("quantizer meta unparseable: ") + e.what());
  }
  LoadedQuantizer out;
  const std::string kind = meta.at("kind").get<std::string>();
  if (kind == "rpq") {
    blob::read_named_tensors(is);  // none expected
    out.is_rpq = true;
    out.rpq = std::make_unique<RandomProjectionQuantizer>(
        meta.at("input_dim").get<std::int64_t>(), meta.at("code_dim").get<std::int64_t>(),
        meta.at("vocab_size").get<std::int64_t>(), meta.at("seed").get<std::uint64_t>(),
        meta.at("l2_normalize").get<bool>());
  } else if (kind == "vqvae") {
    auto cfg = vqvae_config_from_json(meta);
    auto tensors = blob::read_named_tensors(is);
    out.vqvae = std::make_unique<VqVaeQuantizer>(init_vqvae(cfg));
    out.vqvae->trained_steps = meta.value("trained_steps", std::int64_t(0));
    auto fill = [&](ParamSet<float>& set, const std::string& prefix) {
      for (std::size_t i = 0; i < set.size(); ++i) {
        const std::string key = prefix + set.names[i];
        auto it = tensors.find(key);
        require(it != tensors.end(), Errc::corrupt_file, "quantizer missing tensor: " + key);
        require(it->second.same_shape(set.tensors[i]), Errc::corrupt_file,
                "quantizer tensor shape mismatch: " + key);
        set.tensors[i] = std::move(it->second);
      }
    };
    if (out.vqvae->encoder.has_core) fill(out.vqvae->encoder.core.set, "enc_core.");
    fill(out.vqvae->encoder.proj.set, "enc.");
    auto cb = tensors.find("codebook");
    require(cb != tensors.end() && cb->second.same_shape(out.vqvae->codebook), Errc::corrupt_file,
            "quantizer missing/mismatched codebook");
    out.vqvae->codebook = std::move(cb->second);
    if (out.vqvae->decoder.has_core) fill(out.vqvae->decoder.core.set, "dec_core.");
    fill(out.vqvae->decoder.proj.set, "dec.");
  } else {
    fail(Errc::corrupt_file, "unknown quantizer kind: " + kind);
  }
  char trailer[4];
  is.read(trailer, 4);
  require(static_cast<bool>(is) && std::memcmp(trailer, detail::kTrailerMagic, 4) == 0,
          Errc::corrupt_file, "quantizer trailer missing");
  return out;
}

}  // namespace bestrq
