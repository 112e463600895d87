#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cbs/branches.hpp"
#include "cbs/pipeline.hpp"

namespace cbs {

struct ServiceOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks an ephemeral port
  double max_fps = 30.0;
  int io_threads = 2;
  std::size_t stats_window = 100;
};

/// Live steering service.
///
///   GET  /api/classes     class list
///   GET  /api/styles      loaded style ids with PNG thumbnails (data URLs)
///   GET  /api/assignment  last acknowledged assignment
///   PUT  /api/assignment  full replacement; 422 with the offending entry on error
///   GET  /api/stats       rolling FPS and per-stage means
///   WS   /stream          per frame: binary PNG, then a JSON timing message
///
/// The input frames loop forever as the live source. Assignment updates go
/// through the pipeline's control channel and apply at frame boundaries.
class Service {
 public:
  Service(std::shared_ptr<const SegmentationBranch> segmentation, StyleRegistry styles, PipelineConfig config,
          std::vector<Frame> frames, ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the listener and starts the streaming loop; returns immediately.
  void start();
  /// Stops streaming and closes the listener. Idempotent.
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();

  unsigned short port() const;
  StyleAssignment assignment() const;

 private:
  class Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cbs
