#ifndef SPIDER_RECONSTRUCTOR_HPP
#define SPIDER_RECONSTRUCTOR_HPP

#include "spider/core.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace spider {

/// A reconstruction function f: window of sparse frames -> full estimate of the current frame.
///
/// Implementations read the last `window_frames()` frames of whatever window they are given,
/// so callers may pass longer windows. Every implementation must be reentrant on a const
/// instance.
class Reconstructor {
 public:
  virtual ~Reconstructor() = default;

  virtual int window_frames() const = 0;
  virtual std::string name() const = 0;
  virtual Grid reconstruct(const StateWindow& window) const = 0;

  /// Reconstructs several windows; the default loops over `reconstruct`.
  virtual std::vector<Grid> reconstruct_batch(std::span<const StateWindow> windows) const;
};

/// Wraps a plain callable.
class FunctionReconstructor final : public Reconstructor {
 public:
  using Fn = std::function<Grid(const StateWindow&)>;
  FunctionReconstructor(int window_frames, Fn fn, std::string name = "function")
      : frames_(window_frames), fn_(std::move(fn)), name_(std::move(name)) {}

  int window_frames() const override { return frames_; }
  std::string name() const override { return name_; }
  Grid reconstruct(const StateWindow& window) const override { return fn_(window); }

 private:
  int frames_;
  Fn fn_;
  std::string name_;
};

/// Keeps only the last `frames` frames of `window`.
StateWindow tail(const StateWindow& window, int frames);

}  // namespace spider

#endif  // SPIDER_RECONSTRUCTOR_HPP
