// Finite-difference checks of every differentiable building block and of the
// composed detection and tracking objectives, at double precision.
#pragma once

#include <chrono>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gcnet/layers/network.hpp"
#include "gcnet/numerics/gradcheck.hpp"
#include "gcnet/targets/losses.hpp"

namespace gcnet {

struct gradient_check_result {
  std::string name;
  double tolerance = 0.0;
  gradcheck_report report;
  double seconds = 0.0;
};

namespace detail {

inline tensor uniform_tensor(shape_t shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = u(rng);
  return tensor(std::move(shape), std::move(v));
}

// Small scene for loss checks: two objects on a rows x cols feature map.
inline ground_truth_frame suite_scene(double rows, double cols) {
  ground_truth_frame g;
  g.objects.push_back({1, 0, {cols * 0.3, rows * 0.35, rows * 0.4, cols * 0.3}});
  g.objects.push_back({2, 0, {cols * 0.72, rows * 0.7, rows * 0.3, cols * 0.35}});
  return g;
}

}  // namespace detail

/// Runs the whole suite. Per-op checks use tolerance 1e-4; the composed
/// network objectives on a 32x32 image use 1e-3 and probe a random subset of
/// every parameter tensor.
inline std::vector<gradient_check_result> run_gradient_suite(std::uint64_t seed = 1,
                                                             std::size_t samples_per_tensor = 6) {
  using detail::uniform_tensor;
  std::mt19937_64 rng(seed);
  std::vector<gradient_check_result> out;
  const gradcheck_options op{1e-5, 1e-4, 1e-6};
  const gradcheck_options composed{1e-5, 1e-3, 1e-6};

  auto run = [&](const std::string& name, double tol, const std::function<gradcheck_report()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    gradient_check_result r{name, tol, f(), 0.0};
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  };
  // Worst case over several inputs of one op.
  auto worst = [](std::initializer_list<gradcheck_report> reps) {
    gradcheck_report w;
    std::size_t checked = 0;
    bool passed = true, finite = true;
    for (const auto& r : reps) {
      if (r.max_relative_error >= w.max_relative_error) w = r;
      checked += r.checked;
      passed = passed && r.passed;
      finite = finite && r.finite;
    }
    w.checked = checked;
    w.passed = passed;
    w.finite = finite;
    return w;
  };

  {
    auto x = uniform_tensor({2, 6, 5, 3}, rng);
    auto k = uniform_tensor({3, 3, 3, 4}, rng);
    auto probe = uniform_tensor({2, 3, 3, 4}, rng);
    run("conv2d", op.tolerance, [&] {
      return worst({finite_difference_check([&](const tensor& t) { return sum(mul(conv2d(t, k, 2), probe)); }, x, op),
                    finite_difference_check([&](const tensor& t) { return sum(mul(conv2d(x, t, 2), probe)); }, k, op)});
    });
  }
  {
    auto x = uniform_tensor({2, 3, 3, 4}, rng, -2, 2);
    auto gamma = uniform_tensor({4}, rng, 0.5, 1.5);
    auto beta = uniform_tensor({4}, rng);
    auto probe = uniform_tensor({2, 3, 3, 4}, rng);
    for (auto mode : {norm_mode::train, norm_mode::eval}) {
      batch_norm_state<double> frozen(4);
      frozen.mean = {0.1, -0.2, 0.3, 0.0};
      frozen.var = {1.5, 0.7, 2.0, 1.0};
      auto bn = [&, mode](const tensor& a, const tensor& g, const tensor& b) {
        auto s = frozen;
        return sum(mul(batch_norm(a, g, b, s, mode), probe));
      };
      run(mode == norm_mode::train ? "batch_norm.train" : "batch_norm.eval", op.tolerance, [&] {
        return worst({finite_difference_check([&](const tensor& t) { return bn(t, gamma, beta); }, x, op),
                      finite_difference_check([&](const tensor& t) { return bn(x, t, beta); }, gamma, op),
                      finite_difference_check([&](const tensor& t) { return bn(x, gamma, t); }, beta, op)});
      });
    }
  }
  {
    auto x = uniform_tensor({2, 4, 3, 5}, rng);
    auto conf = uniform_tensor({2, 4, 3, 2}, rng, 0.05, 0.95);
    auto probe = uniform_tensor({2, 4, 3, 5}, rng);
    run("gate", op.tolerance, [&] {
      return worst(
          {finite_difference_check([&](const tensor& t) { return sum(mul(gate(t, gate_attention(conf)), probe)); }, x, op),
           finite_difference_check([&](const tensor& t) { return sum(mul(gate(x, gate_attention(t)), probe)); }, conf, op)});
    });
  }
  {
    auto q = uniform_tensor({2, 3, 4, 6}, rng);
    auto k = uniform_tensor({2, 3, 4, 6}, rng);
    auto w = uniform_tensor({5, 12}, rng);
    auto probe = uniform_tensor({2, 12, 5}, rng);
    auto qs = uniform_tensor({3, 6}, rng);
    auto probe_s = uniform_tensor({3, 5}, rng);
    auto keys = reshape(k, shape_t{2 * 12, 6});
    auto first = slice_first(keys, 0, 12);
    run("global_correlation", op.tolerance, [&] {
      return worst({finite_difference_check([&](const tensor& t) { return sum(mul(global_correlation(t, k, w), probe)); }, q, op),
                    finite_difference_check([&](const tensor& t) { return sum(mul(global_correlation(q, t, w), probe)); }, k, op),
                    finite_difference_check([&](const tensor& t) { return sum(mul(global_correlation(q, k, t), probe)); }, w, op),
                    finite_difference_check(
                        [&](const tensor& t) { return sum(mul(sparse_correlation(t, l2_normalize(first), w), probe_s)); }, qs, op),
                    finite_difference_check(
                        [&](const tensor& t) { return sum(mul(sparse_correlation(qs, l2_normalize(t), w), probe_s)); }, first, op)});
    });
  }

  network_config small;
  small.input_h = small.input_w = 32;
  small.channels = 8;
  small.corr_channels = 6;
  small.confidence_hidden = 5;
  gcnet_model<double> model{small, seed};
  {
    auto corr = uniform_tensor({2, 7, small.corr_channels}, rng);
    auto values = uniform_tensor({2, 7, small.channels}, rng);
    auto probe_b = uniform_tensor({2, 7, 4}, rng);
    auto probe_c = uniform_tensor({2, 7, 1}, rng);
    auto head = [&](const tensor& c, const tensor& v) {
      auto h = model.regression_head(c, v, norm_mode::train, true);
      return add(sum(mul(h.boxes, probe_b)), sum(mul(h.confidence, probe_c)));
    };
    std::vector<tensor> head_params;
    for (auto& [name, p] : model.parameters())
      if (name.rfind("head.", 0) == 0 || name.rfind("track.", 0) == 0) head_params.push_back(p.get());
    run("box_head", op.tolerance, [&] {
      return worst({finite_difference_check([&](const tensor& t) { return head(t, values); }, corr, op),
                    finite_difference_check([&](const tensor& t) { return head(corr, t); }, values, op),
                    parameter_gradient_check([&] { return head(corr, values); }, head_params, op)});
    });
  }

  const auto scene = detail::suite_scene(6, 8);
  const auto maps = gaussian_heatmap(scene, 6, 8, 1);
  {
    auto pred = uniform_tensor({1, 6, 8, 1}, rng, 0.05, 0.95);
    auto target = heatmap_batch<double>({maps});
    run("focal_loss", op.tolerance,
        [&] { return finite_difference_check([&](const tensor& t) { return focal_loss(t, target); }, pred, op); });
  }
  {
    std::vector<double> pv, tv;
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 6; ++i) {
      pv.insert(pv.end(), {2 + 4 * u(rng), 2 + 4 * u(rng), 1 + 3 * u(rng), 1 + 3 * u(rng)});
      tv.insert(tv.end(), {2 + 4 * u(rng), 2 + 4 * u(rng), 1 + 3 * u(rng), 1 + 3 * u(rng)});
    }
    tensor pred(shape_t{6, 4}, pv), target(shape_t{6, 4}, tv);
    run("ciou_loss", op.tolerance,
        [&] { return finite_difference_check([&](const tensor& t) { return sum(ciou_loss(t, target)); }, pred, op); });
  }
  {
    auto conf = uniform_tensor({1, 6, 8, 1}, rng, 0.05, 0.95);
    auto boxes = uniform_tensor({1, 48, 4}, rng, 1.0, 5.0);
    auto tconf = uniform_tensor({1, 48, 1}, rng, 0.05, 0.95);
    auto tboxes = uniform_tensor({1, 48, 4}, rng, 1.0, 5.0);
    ground_truth_frame moved = scene;
    moved.objects[0].box.cx += 0.7;
    const auto trk_targets = make_tracking_targets(maps, moved);
    auto total = [&](const tensor& c, const tensor& b, const tensor& tc, const tensor& tb) {
      loss_breakdown parts;
      return total_loss(detection_loss(c, b, {maps}), tracking_loss(tc, tb, {trk_targets}), parts);
    };
    run("total_loss", op.tolerance, [&] {
      return worst({finite_difference_check([&](const tensor& t) { return total(t, boxes, tconf, tboxes); }, conf, op),
                    finite_difference_check([&](const tensor& t) { return total(conf, t, tconf, tboxes); }, boxes, op),
                    finite_difference_check([&](const tensor& t) { return total(conf, boxes, t, tboxes); }, tconf, op),
                    finite_difference_check([&](const tensor& t) { return total(conf, boxes, tconf, t); }, tboxes, op)});
    });
  }

  // Composed objectives through the whole network on 32x32 frames.
  auto images = uniform_tensor({2, 32, 32, 3}, rng, 0.0, 1.0);
  const auto gt = detail::suite_scene(4, 4);
  ground_truth_frame gt_next = gt;
  gt_next.objects[1].box.cy += 0.4;
  const auto m4 = gaussian_heatmap(gt, 4, 4, 1);
  const auto m4_next = gaussian_heatmap(gt_next, 4, 4, 1);
  std::vector<tensor> params;
  for (auto& [name, p] : model.parameters()) params.push_back(p.get());
  // Train-mode forwards update running statistics that the eval-mode
  // tracking head reads; autograd treats those as constants, so the checked
  // function must too.
  std::vector<std::vector<double>> saved_buffers;
  for (auto& [name, b] : model.buffers()) saved_buffers.push_back(b.get());
  auto reset_buffers = [&] {
    std::size_t i = 0;
    for (auto& [name, b] : model.buffers()) b.get() = saved_buffers[i++];
  };
  run("network.detection", composed.tolerance, [&] {
    return parameter_gradient_check(
        [&] {
          reset_buffers();
          auto o = model.detect(images, norm_mode::train, true);
          loss_breakdown parts;
          return total_loss(detection_loss(o.confidence, o.boxes, {m4, m4_next}), loss_pair<double>{}, parts);
        },
        params, composed, samples_per_tensor, seed);
  });
  run("network.joint", composed.tolerance, [&] {
    return parameter_gradient_check(
        [&] {
          reset_buffers();
          auto o = model.detect(images, norm_mode::train, true);
          reset_buffers();
          auto head = model.track_dense(slice_first(o.q, 0, 1), slice_first(o.v, 0, 1), slice_first(o.k, 1, 1));
          loss_breakdown parts;
          return total_loss(detection_loss(o.confidence, o.boxes, {m4, m4_next}),
                            tracking_loss(head.confidence, head.boxes, {make_tracking_targets(m4, gt_next)}), parts);
        },
        params, composed, samples_per_tensor, seed + 1);
  });
  for (auto& r : out) r.report.passed = r.report.finite && r.report.max_relative_error < r.tolerance;
  return out;
}

}  // namespace gcnet
