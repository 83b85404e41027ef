#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace csmap::cli {

/// I/O failures map to exit code 1; std::invalid_argument to 2; other
/// runtime errors (numerical) to 3.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string out_dir = "out";
  std::string scene_dir;       // input manifest directory
  std::uint64_t seed = 0;

  // synth
  std::string layout = "straight";
  double extent = 50.0;
  int lanes = 2;
  double resolution = 0.25;
  int sessions = 10;
  double vertex_sigma = 0.1;
  double dropout = 0.0;
  double outlier_rate = 0.0;
  double session_bias_sigma = 0.0;
  double lateral_drift_sigma = 0.3;
  double coverage = 1.0;
  int prior_scenes = 0;        // > 0: fit a diagonal Gaussian latent prior

  // vecmap
  double alpha = 0.5;          // VCA foreground/background ratio
  double tls_c = 1.5;          // GNC truncation threshold, meters
  int min_cells = 4;
  bool baseline = false;       // also evaluate naive accumulation

  // latentopt
  std::string init_raster;     // defaults to <scene_dir>/init.csmr
  std::string predictor;       // CSMLP1 file
  std::string prior_mean;      // Gaussian predictor rasters
  std::string prior_var;
  int basis_count = 256;       // K
  int denoise_steps = 3;
  int invert_steps = 5;
  int iterations = 60;
  int starts = 1;              // N_s
  double tau_fg = 0.33;
  double bg_percentile = 75.0;
  double step_size = 0.3;
  std::string method = "ddim";  // ddim | multistep2
  int codec_factor = 4;
  bool likelihood_only = false;  // selection without the prior term

  // stitch
  std::string graph;           // graph description JSON

  // topomap
  std::string trajectories;    // geojson or csv input
  std::string gt_centerlines;
  int k = 25;
  double tau_nms = 3.0;
  double lambda_obs = 0.2, lambda_head = 0.3, lambda_smooth = 0.5;
  double tau_theta_deg = 4.0;
  double sigma_r = 0.2;
  double dt = 0.1;
  double lambda_ctrl = 10.0;

  // eval
  std::string pred_path;
  std::string gt_path;
  int dilate = 0;              // morphological dilation radius in cells

  // bench
  std::string axis = "sessions";
  std::vector<double> values;
  int bench_scenes = 5;
};

int cmd_synth(const RunConfig& cfg);
int cmd_vecmap(const RunConfig& cfg);
int cmd_latentopt(const RunConfig& cfg);
int cmd_stitch(const RunConfig& cfg);
int cmd_topomap(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_bench(const RunConfig& cfg);

/// Applies values from a JSON config file (lowest precedence).
void load_config_file(const std::string& path, RunConfig& cfg);

/// Persists the effective configuration for provenance.
void dump_config(const std::string& path, const RunConfig& cfg, const std::string& command);

}  // namespace csmap::cli
