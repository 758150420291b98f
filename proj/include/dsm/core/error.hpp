#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace dsm {

enum class Errc {
  invariant_violation,
  malformed_document,
  schema_violation,
  bad_token,
  window_too_short,
  all_zero_signal,
  bad_thresholds,
  bad_factor,
  code_out_of_range,
  non_causal_timestamps,
  unknown_command,
  invalid_value,
  source_exhausted,
  bad_filter,
  protocol_error,
  parse_error,
  graph_invalid,
  startup_failure,
  missing_feature,
  invalid_model_file,
  single_class,
  too_few_records,
  non_finite_loss,
  out_of_bounds,
  malformed_batch,
  no_sessions,
  gateway_unreachable,
  config_invalid,
  io_error,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
  case Errc::invariant_violation: return "InvariantViolation";
  case Errc::malformed_document: return "MalformedDocument";
  case Errc::schema_violation: return "SchemaViolation";
  case Errc::bad_token: return "BadToken";
  case Errc::window_too_short: return "WindowTooShort";
  case Errc::all_zero_signal: return "AllZeroSignal";
  case Errc::bad_thresholds: return "BadThresholds";
  case Errc::bad_factor: return "BadFactor";
  case Errc::code_out_of_range: return "CodeOutOfRange";
  case Errc::non_causal_timestamps: return "NonCausalTimestamps";
  case Errc::unknown_command: return "UnknownCommand";
  case Errc::invalid_value: return "InvalidValue";
  case Errc::source_exhausted: return "SourceExhausted";
  case Errc::bad_filter: return "BadFilter";
  case Errc::protocol_error: return "ProtocolError";
  case Errc::parse_error: return "ParseError";
  case Errc::graph_invalid: return "GraphInvalid";
  case Errc::startup_failure: return "StartupFailure";
  case Errc::missing_feature: return "MissingFeature";
  case Errc::invalid_model_file: return "InvalidModelFile";
  case Errc::single_class: return "SingleClass";
  case Errc::too_few_records: return "TooFewRecords";
  case Errc::non_finite_loss: return "NonFiniteLoss";
  case Errc::out_of_bounds: return "OutOfBounds";
  case Errc::malformed_batch: return "MalformedBatch";
  case Errc::no_sessions: return "NoSessions";
  case Errc::gateway_unreachable: return "GatewayUnreachable";
  case Errc::config_invalid: return "ConfigInvalid";
  case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

/// Structured failure: a code plus the field, path or name it concerns.
/// what() renders as `Code(subject): detail`.
class Error : public std::runtime_error {
public:
  Error(Errc code, std::string subject, std::string detail = {})
      : std::runtime_error(render(code, subject, detail)), code_(code),
        subject_(std::move(subject)), detail_(std::move(detail)) {}

  Errc code() const noexcept { return code_; }
  const std::string &subject() const noexcept { return subject_; }
  const std::string &detail() const noexcept { return detail_; }

private:
  static std::string render(Errc code, const std::string &subject,
                            const std::string &detail) {
    std::string out(to_string(code));
    out += '(';
    out += subject;
    out += ')';
    if (!detail.empty()) {
      out += ": ";
      out += detail;
    }
    return out;
  }

  Errc code_;
  std::string subject_;
  std::string detail_;
};

} // namespace dsm
