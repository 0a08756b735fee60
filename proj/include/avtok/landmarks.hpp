#pragma once

#include <Eigen/Dense>
#include <string>

#include "avtok/rng.hpp"

namespace avtok {

/// Synthetic face-landmark sequences: a fixed procedural template deformed by
/// a per-sequence sum of low-frequency sinusoidal modes with smooth spatial
/// envelopes.  Coordinates stay inside the unit square.
struct LmkSynthConfig {
  int n_points = 95;
  double fps = 25.0;
  int n_modes = 4;
  double amplitude = 0.05;  // bound on total point displacement
  double freq_lo = 0.3;     // Hz
  double freq_hi = 1.5;
};

/// Deterministic template face, n_points x 2, inside [0.12, 0.88].
Eigen::MatrixXd base_face(int n_points);

/// One sequence, n_frames rows of 2*n_points interleaved coordinates.
Eigen::MatrixXd synth_landmark_sequence(const LmkSynthConfig& cfg, Rng& rng,
                                        int n_frames);

/// Binary landmark container: "LMK1", u32 version, u32 frame count, u32 frame
/// dim, then row-major float32 frames.
void write_lmk(const std::string& path, const Eigen::MatrixXf& frames);
Eigen::MatrixXf read_lmk(const std::string& path);

/// JSONL frames: one JSON array of frame-dim numbers per line.
void write_frames_jsonl(const std::string& path, const Eigen::MatrixXd& frames);
Eigen::MatrixXd read_frames_jsonl(const std::string& path);

}  // namespace avtok
