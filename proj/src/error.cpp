#include "attnlab/error.hpp"

namespace attnlab {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension_error";
    case ErrorKind::state: return "state_error";
    case ErrorKind::degenerate_input: return "degenerate_input";
    case ErrorKind::range: return "range_error";
    case ErrorKind::config: return "config_error";
    case ErrorKind::input: return "input_error";
    case ErrorKind::format: return "format_error";
    case ErrorKind::compatibility: return "compatibility_error";
    case ErrorKind::domain: return "domain_error";
    case ErrorKind::parameter: return "parameter_error";
    case ErrorKind::data: return "data_error";
    case ErrorKind::numeric: return "numeric_error";
    case ErrorKind::usage: return "usage_error";
  }
  return "error";
}

}  // namespace attnlab
