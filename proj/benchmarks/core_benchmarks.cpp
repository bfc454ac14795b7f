#include <benchmark/benchmark.h>

#include <random>

#include "kfrecon/keyframe_fusion.hpp"
#include "kfrecon/meshing.hpp"
#include "kfrecon/reintegration.hpp"
#include "kfrecon/sdf_volume.hpp"
#include "kfrecon/synth.hpp"

namespace kfrecon {
namespace {

Intrinsics vga_quarter() {
  Intrinsics k;
  k.width = 160;
  k.height = 120;
  k.fx = k.fy = 131.25;
  k.cx = 79.5;
  k.cy = 59.5;
  return k;
}

VolumeConfig bench_volume() {
  VolumeConfig cfg;
  cfg.voxel_size = 0.02;
  cfg.truncation = 0.06;
  cfg.stream_radius = 4.0;
  return cfg;
}

const Pose kView = Pose::from_axis_angle(Vec3::UnitY(), 0.4, Vec3(0.1, 0.1, -0.2));

FrameObservation room_frame(const Pose& pose, int index = 1) {
  const RenderedFrame r = render(AnalyticScene::desk_room(), pose, vga_quarter());
  return FrameObservation{index, r.color, add_noise(r.depth, 0.002, index), pose};
}

Keyframe room_keyframe() {
  const Intrinsics k = vga_quarter();
  Keyframe kf = Keyframe::open(0, k, kView, 0, Pose::identity());
  fuse_depth(kf, room_frame(kView), k, {});
  fuse_color(kf, k, {});
  return kf;
}

void BM_FuseDepth(benchmark::State& state) {
  const Intrinsics k = vga_quarter();
  const FrameObservation frame = room_frame(kView * Pose::from_translation(Vec3(0.02, 0, 0)), 2);
  FusionParams params;
  params.collect_color = false;
  for (auto _ : state) {
    Keyframe kf = Keyframe::open(0, k, kView, 0, Pose::identity());
    fuse_depth(kf, frame, k, params);
    benchmark::DoNotOptimize(kf.depth.data().data());
  }
}
BENCHMARK(BM_FuseDepth)->Unit(benchmark::kMillisecond);

void BM_Integrate(benchmark::State& state) {
  const Keyframe kf = room_keyframe();
  for (auto _ : state) {
    state.PauseTiming();
    TwoTierStore store(bench_volume());
    store.stream(kView.translation());
    state.ResumeTiming();
    integrate(store, kf, kView, vga_quarter());
  }
}
BENCHMARK(BM_Integrate)->Unit(benchmark::kMillisecond);

void BM_IntegrateDeintegrate(benchmark::State& state) {
  const Keyframe kf = room_keyframe();
  TwoTierStore store(bench_volume());
  store.stream(kView.translation());
  integrate(store, kf, kView, vga_quarter());
  for (auto _ : state) {
    deintegrate(store, kf, kView, vga_quarter());
    integrate(store, kf, kView, vga_quarter());
  }
}
BENCHMARK(BM_IntegrateDeintegrate)->Unit(benchmark::kMillisecond);

void BM_SelectWindow(benchmark::State& state) {
  const auto entries = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 0.1);
  IntegrationLedger ledger;
  PoseUpdateEvent ev;
  for (std::size_t i = 0; i < entries; ++i) {
    const int id = static_cast<int>(i);
    ledger.declare_anchor(id, Pose::identity());
    ledger.append(id, id, Pose::identity());
    ev.anchor_poses[id] = Pose::from_translation(Vec3(u(rng), 0, 0));
  }
  ledger.apply_pose_update(ev);
  for (auto _ : state) benchmark::DoNotOptimize(select_window(ledger, 10));
}
BENCHMARK(BM_SelectWindow)->Arg(100)->Arg(1000)->Arg(10000);

void BM_MarchingCubes(benchmark::State& state) {
  TwoTierStore store(bench_volume());
  store.stream(kView.translation());
  integrate(store, room_keyframe(), kView, vga_quarter());
  for (auto _ : state) benchmark::DoNotOptimize(marching_cubes(store).triangles.size());
}
BENCHMARK(BM_MarchingCubes)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace kfrecon

BENCHMARK_MAIN();
