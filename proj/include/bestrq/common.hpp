#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bestrq {

/// Error categories surfaced through exceptions; the CLI maps them to exit codes.
enum class Errc {
  invalid_input,
  invalid_config,
  shape_mismatch,
  dim_mismatch,
  precondition,
  malformed_header,
  truncated_payload,
  io_error,
  parse_error,
  duplicate_id,
  version_mismatch,
  config_hash_mismatch,
  corrupt_file,
  degenerate_projection,
  out_of_range_label,
  infeasible_target,
  training_diverged,
  undefined_metric,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_input: return "invalid_input";
    case Errc::invalid_config: return "invalid_config";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::dim_mismatch: return "dim_mismatch";
    case Errc::precondition: return "precondition";
    case Errc::malformed_header: return "malformed_header";
    case Errc::truncated_payload: return "truncated_payload";
    case Errc::io_error: return "io_error";
    case Errc::parse_error: return "parse_error";
    case Errc::duplicate_id: return "duplicate_id";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::config_hash_mismatch: return "config_hash_mismatch";
    case Errc::corrupt_file: return "corrupt_file";
    case Errc::degenerate_projection: return "degenerate_projection";
    case Errc::out_of_range_label: return "out_of_range_label";
    case Errc::infeasible_target: return "infeasible_target";
    case Errc::training_diverged: return "training_diverged";
    case Errc::undefined_metric: return "undefined_metric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace bestrq
