#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "occ4d/grid.hpp"
#include "occ4d/synth.hpp"

namespace testing {

// SplitMix64; kept separate from the library generator so test inputs do not
// depend on the code under test.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : s_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (s_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int below(int n) { return static_cast<int>(next() % static_cast<std::uint64_t>(n)); }

 private:
  std::uint64_t s_;
};

inline occ4d::GridSpec small_spec(int nx, int ny, int nz, int np = 2, int nf = 4,
                                  double res = 1.0) {
  return occ4d::GridSpec::from_corner(occ4d::Vec3(0, 0, 0), res, nx, ny, nz, np, nf);
}

// The default lattice shrunk to 128 x 128 x 20 around the ego.
inline occ4d::GridSpec scaled_spec() {
  return occ4d::GridSpec({-12.8, 12.8}, {-12.8, 12.8}, {-3.0, 1.0}, 0.2, 2, 4);
}

inline occ4d::OccupancyGrid random_grid(const occ4d::GridSpec& spec, Rng& rng,
                                        double p_gmo, double p_gso,
                                        bool with_ids = false, int max_id = 4) {
  occ4d::OccupancyGrid g(spec, with_ids);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double u = rng.uniform();
    if (u < p_gmo) {
      g.set(i, occ4d::SemanticLabel::GMO,
            with_ids ? static_cast<std::uint16_t>(1 + rng.below(max_id)) : 0);
    } else if (u < p_gmo + p_gso) {
      g.set(i, occ4d::SemanticLabel::GSO);
    }
  }
  return g;
}

// Synthetic scene on the scaled lattice: `frames` frames, `count` instances
// with the given motion and a static ego.
inline occ4d::SynthConfig scaled_config(std::uint64_t seed, occ4d::MotionKind motion,
                                        int count, int frames = 7) {
  occ4d::SynthConfig c;
  c.seed = seed;
  c.scene_id = "s" + std::to_string(seed);
  c.frame_count = frames;
  c.instance_count = count;
  c.random_motion = motion;
  c.speed = {0.5, 2.5};
  c.grid = scaled_spec();
  c.spawn_x = {-10.0, 10.0};
  c.spawn_y = {-10.0, 10.0};
  c.extent_margin = 0.4;
  return c;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("occ4d_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
