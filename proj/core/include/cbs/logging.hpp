#pragma once

namespace cbs {

/// Reads CBS_LOG (trace, debug, info, warn, error, off); defaults to warn.
void init_logging();

}  // namespace cbs
