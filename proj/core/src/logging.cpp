#include "cbs/logging.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace cbs {

void init_logging() {
  auto logger = spdlog::get("cbs");
  if (!logger) logger = spdlog::stderr_color_mt("cbs");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("CBS_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only honour exact names.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
  }
}

}  // namespace cbs
