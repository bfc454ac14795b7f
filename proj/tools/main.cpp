#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kfrecon/config.hpp"
#include "kfrecon/dataset.hpp"
#include "kfrecon/error.hpp"
#include "kfrecon/evaluation.hpp"
#include "kfrecon/meshing.hpp"
#include "kfrecon/pipeline.hpp"
#include "kfrecon/synth.hpp"
#include "kfrecon/volume_io.hpp"

namespace fs = std::filesystem;
using namespace kfrecon;

namespace {

// Settings given on the command line; applied on top of the config file.
struct Overrides {
  std::map<std::string, std::string> values;

  void add(CLI::App* app) {
    for (const char* key : {"strategy", "kappa", "m", "mode", "voxel_size", "truncation", "stream_radius",
                            "hash_buckets", "max_rotation", "max_translation", "overlap_min",
                            "discontinuity_threshold", "occlusion_tolerance", "unsharp_sigma", "unsharp_gain",
                            "anchor_interval", "final_pass"}) {
      std::string flag = key == std::string("m") ? "--window" : "--" + std::string(key);
      std::replace(flag.begin(), flag.end(), '_', '-');
      app->add_option_function<std::string>(
          flag, [this, key](const std::string& v) { values[key] = v; }, "Overrides '" + std::string(key) + "'");
    }
  }

  RunConfig resolve(const std::string& config_path) const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const auto& [key, value] : values) apply_setting(cfg, key, value);
    cfg.validate();
    return cfg;
  }
};

void write_mesh(const fs::path& path, const TriangleMesh& mesh) {
  if (path.extension() == ".obj") {
    write_obj(path, mesh);
  } else {
    write_ply(path, mesh);
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kFormat, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<ScheduledCorrection> parse_schedule(const std::vector<std::string>& items) {
  std::vector<ScheduledCorrection> out;
  for (const std::string& item : items) {
    const auto colon = item.find(':');
    try {
      ScheduledCorrection c;
      c.frame = std::stoi(item.substr(0, colon));
      if (colon != std::string::npos) c.fraction = std::stod(item.substr(colon + 1));
      out.push_back(c);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidArgument, "bad correction '" + item + "', expected FRAME[:FRACTION]");
    }
  }
  return out;
}

PointCloud reference_from_dataset(const FrameSource& source, const VolumeConfig& volume, std::size_t samples,
                                  std::uint64_t seed) {
  const SequenceInfo& info = source.info();
  std::vector<FrameObservation> frames;
  frames.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) frames.push_back(source.load(i));
  std::cerr << "building reference from " << frames.size() << " frames at ground-truth poses\n";
  const TriangleMesh mesh = build_reference(frames, info.ground_truth, info.intrinsics, volume);
  return sample_mesh(mesh, samples, seed);
}

nlohmann::json metrics_json(const TriangleMesh& model, const PointCloud& reference, double cell) {
  nlohmann::json j;
  j["model_vertices"] = model.vertices.size();
  j["reference_points"] = reference.size();
  j["corr_mad_mm"] = mad_correctness(model, reference, cell);
  j["compl_mad_mm"] = mad_completeness(model, reference, cell);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keyframe-based surface reconstruction with on-the-fly correction"};
  app.require_subcommand(1);

  // synth -------------------------------------------------------------------
  CLI::App* synth = app.add_subcommand("synth", "Render a synthetic desk-room dataset");
  fs::path synth_out;
  int width = 640, height = 480;
  double fx = 525.0, fy = 525.0, cx = 319.5, cy = 239.5;
  int waypoints = 6, frames_per_segment = 100, anchor_interval = 10;
  double orbit_radius = 0.35, sway = 0.25;
  double drift_t = 0.0, drift_r = 0.0, noise = 0.0, blur = 0.0;
  std::vector<std::string> corrections;
  std::uint64_t seed = 1;
  synth->add_option("-o,--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--width", width);
  synth->add_option("--height", height);
  synth->add_option("--fx", fx);
  synth->add_option("--fy", fy);
  synth->add_option("--cx", cx);
  synth->add_option("--cy", cy);
  synth->add_option("--waypoints", waypoints, "Waypoints on the orbit");
  synth->add_option("--frames-per-segment", frames_per_segment);
  synth->add_option("--orbit-radius", orbit_radius);
  synth->add_option("--sway", sway, "Yaw sway amplitude (rad)");
  synth->add_option("--drift-translation", drift_t, "Drift per frame (m)");
  synth->add_option("--drift-rotation", drift_r, "Drift per frame (rad)");
  synth->add_option("--correction", corrections, "Pose update FRAME[:FRACTION], repeatable");
  synth->add_option("--anchor-interval", anchor_interval);
  synth->add_option("--noise", noise, "Depth noise sigma0 (sigma = sigma0 z^2)");
  synth->add_option("--blur", blur, "Maximum color blur sigma (px)");
  synth->add_option("--seed", seed);

  // reconstruct -------------------------------------------------------------
  CLI::App* recon = app.add_subcommand("reconstruct", "Reconstruct a mesh from a dataset");
  fs::path dataset, mesh_out, stats_out, volume_out, metrics_out;
  std::string config_path;
  std::size_t reference_samples = 5'000'000;
  Overrides recon_overrides;
  recon->add_option("-d,--dataset", dataset)->required()->check(CLI::ExistingDirectory);
  recon->add_option("-c,--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  recon->add_option("-o,--mesh", mesh_out, "Mesh output (.ply or .obj)")->required();
  recon->add_option("--stats", stats_out, "Per-frame statistics CSV");
  recon->add_option("--volume", volume_out, "Volume checkpoint");
  recon->add_option("--metrics", metrics_out, "Metrics JSON against the ground-truth reference");
  recon->add_option("--reference-samples", reference_samples);
  recon_overrides.add(recon);

  // evaluate ----------------------------------------------------------------
  CLI::App* eval = app.add_subcommand("evaluate", "Compare a mesh to a reference");
  fs::path model_path, reference_mesh, eval_out, distance_ply;
  std::string eval_config;
  std::size_t eval_samples = 5'000'000;
  Overrides eval_overrides;
  eval->add_option("-m,--model", model_path, "Model mesh (PLY)")->required()->check(CLI::ExistingFile);
  auto* ref_mesh_opt = eval->add_option("-r,--reference", reference_mesh, "Reference mesh (PLY), sampled");
  auto* ref_data_opt = eval->add_option("-d,--dataset", dataset, "Dataset with ground truth to fuse a reference");
  ref_mesh_opt->excludes(ref_data_opt);
  eval->add_option("-c,--config", eval_config, "Volume settings for the fused reference")
      ->check(CLI::ExistingFile);
  eval->add_option("--samples", eval_samples, "Reference point count");
  eval->add_option("--seed", seed);
  eval->add_option("-o,--out", eval_out, "Metrics JSON");
  eval->add_option("--distance-ply", distance_ply, "Model colored by correctness distance");
  eval_overrides.add(eval);

  // bench -------------------------------------------------------------------
  CLI::App* bench = app.add_subcommand("bench", "Run a kappa x m x mode matrix");
  std::vector<int> kappas{1, 20};
  std::vector<std::size_t> windows;
  std::vector<std::string> modes{"consecutive_window"};
  bool matched = false, with_metrics = false;
  fs::path bench_out;
  Overrides bench_overrides;
  bench->add_option("-d,--dataset", dataset)->required()->check(CLI::ExistingDirectory);
  bench->add_option("-c,--config", config_path)->check(CLI::ExistingFile);
  bench->add_option("--kappas", kappas)->delimiter(',');
  bench->add_option("--windows", windows, "Window sizes; defaults to the configured m")->delimiter(',');
  bench->add_option("--modes", modes)->delimiter(',');
  bench->add_flag("--matched-rate", matched, "Use m = 100 / kappa instead of --windows");
  bench->add_flag("--metrics", with_metrics, "Evaluate against the ground-truth reference");
  bench->add_option("--reference-samples", reference_samples);
  bench->add_option("-o,--out", bench_out, "CSV output (stdout if omitted)");
  bench_overrides.add(bench);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      Intrinsics k;
      k.fx = fx;
      k.fy = fy;
      k.cx = cx;
      k.cy = cy;
      k.width = width;
      k.height = height;
      TrajectorySpec spec;
      spec.waypoints = orbit_waypoints(Vec3(0.0, 0.1, 0.0), orbit_radius, waypoints, sway);
      spec.frames_per_segment = frames_per_segment;
      spec.drift_translation = drift_t;
      spec.drift_rotation = drift_r;
      spec.schedule = parse_schedule(corrections);
      spec.anchor_interval = anchor_interval;
      spec.noise_sigma0 = noise;
      spec.blur_max_sigma = blur;
      spec.seed = seed;
      const SyntheticSequence seq(AnalyticScene::desk_room(), spec, k);
      write_dataset(seq, synth_out);
      std::cerr << "wrote " << seq.size() << " frames and " << seq.info().events.size() << " events to "
                << synth_out << '\n';
    } else if (recon->parsed()) {
      const RunConfig cfg = recon_overrides.resolve(config_path);
      const DiskDataset source = ingest_dataset(dataset);
      const RunResult result = reconstruct(source, cfg);
      write_mesh(mesh_out, result.mesh);
      if (!stats_out.empty()) write_stats_csv(stats_out, result.stats);
      if (!volume_out.empty()) save_volume(volume_out, result.volume);
      const RunStats& s = result.stats;
      std::cerr << source.size() << " frames, " << s.keyframes << " keyframes, " << s.events << " events, "
                << s.corrected_entries << " corrected + " << s.finalized_entries << " finalized; "
                << result.mesh.triangles.size() << " triangles\n";
      if (!metrics_out.empty()) {
        const PointCloud reference = reference_from_dataset(source, cfg.volume, reference_samples, seed);
        nlohmann::json j = metrics_json(result.mesh, reference, 4.0 * cfg.volume.voxel_size);
        j["keyframes"] = s.keyframes;
        j["events"] = s.events;
        j["corrected_entries"] = s.corrected_entries;
        j["finalized_entries"] = s.finalized_entries;
        j["integrate_ms"] = s.total_integrate_ms();
        j["correct_ms"] = s.total_correct_ms();
        j["final_pass_ms"] = s.final_pass_ms;
        j["blocks_streamed_in"] = s.counters.blocks_streamed_in;
        j["blocks_streamed_out"] = s.counters.blocks_streamed_out;
        j["sphere_relocations"] = s.counters.sphere_relocations;
        write_json(metrics_out, j);
      }
    } else if (eval->parsed()) {
      if (reference_mesh.empty() && dataset.empty()) {
        throw Error(ErrorCode::kInvalidArgument, "evaluate needs --reference or --dataset");
      }
      const RunConfig cfg = eval_overrides.resolve(eval_config);
      const TriangleMesh model = read_ply(model_path);
      const PointCloud reference = reference_mesh.empty()
                                       ? reference_from_dataset(ingest_dataset(dataset), cfg.volume, eval_samples, seed)
                                       : sample_mesh(read_ply(reference_mesh), eval_samples, seed);
      const double cell = 4.0 * cfg.volume.voxel_size;
      const nlohmann::json j = metrics_json(model, reference, cell);
      if (!eval_out.empty()) write_json(eval_out, j);
      std::cout << j.dump(2) << '\n';
      if (!distance_ply.empty()) {
        std::vector<double> mm = nearest_distances(model.vertices, reference, cell);
        for (double& d : mm) d *= 1000.0;
        write_distance_ply(distance_ply, model, mm);
      }
    } else if (bench->parsed()) {
      const RunConfig base = bench_overrides.resolve(config_path);
      const DiskDataset source = ingest_dataset(dataset);
      if (windows.empty()) windows = {base.window};
      std::vector<BenchCase> cases;
      for (const std::string& mode_name : modes) {
        const ReintegrationMode mode = parse_reintegration_mode(mode_name);
        for (int kappa : kappas) {
          if (matched) {
            cases.push_back({kappa, std::max<std::size_t>(1, 100 / static_cast<std::size_t>(kappa)), mode});
            continue;
          }
          for (std::size_t m : windows) cases.push_back({kappa, m, mode});
        }
      }
      std::optional<PointCloud> reference;
      if (with_metrics) reference = reference_from_dataset(source, base.volume, reference_samples, seed);
      const auto rows = run_bench(source, base, cases, reference ? &*reference : nullptr);
      if (bench_out.empty()) {
        write_bench_csv(std::cout, rows);
      } else {
        std::ofstream out(bench_out);
        if (!out) throw Error(ErrorCode::kFormat, "cannot write " + bench_out.string());
        write_bench_csv(out, rows);
      }
    }
  } catch (const Error& e) {
    std::cerr << "kfrecon: " << to_string(e.code()) << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
