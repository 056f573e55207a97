#include "unirep/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "unirep/errors.hpp"
#include "unirep/rng.hpp"

namespace unirep {

// --- enums -------------------------------------------------------------------

std::string to_string(TaskKind k) { return k == TaskKind::dense ? "dense" : "classification"; }

std::string to_string(TaskLoss l) {
  switch (l) {
    case TaskLoss::cross_entropy: return "cross_entropy";
    case TaskLoss::l1: return "l1";
    case TaskLoss::cosine_normals: return "cosine_normals";
  }
  return "?";
}

std::string to_string(TaskMetric m) {
  switch (m) {
    case TaskMetric::miou: return "miou";
    case TaskMetric::abs_err: return "abs_err";
    case TaskMetric::mean_angle_err: return "mean_angle_err";
    case TaskMetric::accuracy: return "accuracy";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& s) {
  if (s == "dense") return TaskKind::dense;
  if (s == "classification") return TaskKind::classification;
  throw ConfigError("unknown task kind '" + s + "'");
}

TaskLoss parse_task_loss(const std::string& s) {
  if (s == "cross_entropy") return TaskLoss::cross_entropy;
  if (s == "l1") return TaskLoss::l1;
  if (s == "cosine_normals") return TaskLoss::cosine_normals;
  throw ConfigError("unknown task loss '" + s + "'");
}

TaskMetric parse_task_metric(const std::string& s) {
  if (s == "miou") return TaskMetric::miou;
  if (s == "abs_err") return TaskMetric::abs_err;
  if (s == "mean_angle_err") return TaskMetric::mean_angle_err;
  if (s == "accuracy") return TaskMetric::accuracy;
  throw ConfigError("unknown task metric '" + s + "'");
}

std::string to_string(SuiteMode m) { return m == SuiteMode::mtl ? "mtl" : "mdl"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::meta_test: return "meta_test_classes";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "meta_test_classes" || s == "meta_test") return Split::meta_test;
  throw ConfigError("unknown split '" + s + "'");
}

void TaskSpec::validate() const {
  if (id.empty()) throw ConfigError("task id must be non-empty");
  if (out_channels < 1 || out_height < 1 || out_width < 1) {
    throw ConfigError("task '" + id + "': output dimensions must be positive");
  }
  if (kind == TaskKind::classification && (out_height != 1 || out_width != 1)) {
    throw ConfigError("task '" + id + "': classification tasks have 1x1 outputs");
  }
  if (loss == TaskLoss::cosine_normals && out_channels != 3) {
    throw ConfigError("task '" + id + "': cosine_normals needs 3 output channels");
  }
}

// --- suite -------------------------------------------------------------------

const TaskSpec& DatasetSuite::task(const std::string& id) const {
  for (const auto& t : tasks)
    if (t.id == id) return t;
  throw ConfigError("suite has no task '" + id + "'");
}

int DatasetSuite::task_index(const std::string& id) const {
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].id == id) return static_cast<int>(i);
  return -1;
}

const std::vector<LabeledSample>& DatasetSuite::split(Split s) const {
  static const std::vector<LabeledSample> kEmpty;
  auto it = splits.find(s);
  return it == splits.end() ? kEmpty : it->second;
}

int DatasetSuite::domain_of_task(const std::string& id) const {
  for (std::size_t i = 0; i < domains.size(); ++i)
    if (domains[i].task_id == id) return static_cast<int>(i);
  return -1;
}

int DatasetSuite::withheld_domain() const {
  for (std::size_t i = 0; i < domains.size(); ++i)
    if (domains[i].withheld) return static_cast<int>(i);
  return -1;
}

std::uint64_t DatasetSuite::content_hash() const {
  std::uint64_t h = fnv1a(to_string(mode));
  auto mix = [&h](const void* p, std::size_t n) {
    h = fnv1a(std::string_view(static_cast<const char*>(p), n), h);
  };
  mix(&seed, sizeof seed);
  for (const auto& [split_id, samples] : splits) {
    const int sid = static_cast<int>(split_id);
    mix(&sid, sizeof sid);
    for (const auto& s : samples) {
      mix(s.image.data(), s.image.size() * sizeof(float));
      mix(&s.domain, sizeof s.domain);
      mix(&s.class_label, sizeof s.class_label);
      for (const auto& [task, label] : s.labels) {
        mix(task.data(), task.size());
        mix(label.ints.data(), label.ints.size() * sizeof(std::int32_t));
        mix(label.floats.data(), label.floats.size() * sizeof(float));
      }
    }
  }
  return h;
}

// --- dense generator ---------------------------------------------------------

namespace {

enum ShapeClass { kDisk = 1, kSquare = 2, kTriangle = 3, kRing = 4 };

struct SceneShape {
  int cls = kDisk;
  double cx = 0.5, cy = 0.5;
  double size = 0.2;      // radius / half-size / circumradius / outer radius
  double inner = 0.1;     // ring inner radius
  double angle = 0.0;
  double amplitude = 0.0; // profile amplitude
  double level = 0.5;
  std::array<double, 6> tri{};  // triangle vertices
  std::array<double, 3> color{};
};

struct Scene {
  double b0, bx, by, ba, bf, bp1, bp2;
  std::array<double, 3> bg_color;
  std::array<double, 3> light;
  std::vector<SceneShape> shapes;
};

constexpr std::array<std::array<double, 3>, 5> kClassColor = {{
    {0.55, 0.52, 0.48},  // background
    {0.85, 0.25, 0.20},  // disk
    {0.25, 0.75, 0.30},  // square
    {0.25, 0.35, 0.85},  // triangle
    {0.85, 0.80, 0.25},  // ring
}};

Scene make_scene(std::uint64_t seed, int index) {
  Rng rng(derive_seed(seed, "dense/scene", static_cast<std::uint64_t>(index)));
  Scene sc{};
  sc.b0 = rng.uniform(0.15, 0.25);
  sc.bx = rng.uniform(-0.1, 0.1);
  sc.by = rng.uniform(-0.1, 0.1);
  sc.ba = rng.uniform(0.0, 0.05);
  sc.bf = rng.uniform(0.8, 1.6);
  sc.bp1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  sc.bp2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int c = 0; c < 3; ++c) sc.bg_color[static_cast<std::size_t>(c)] = kClassColor[0][c] + rng.uniform(-0.08, 0.08);
  const double lx = -0.4 + rng.uniform(-0.05, 0.05), ly = -0.3 + rng.uniform(-0.05, 0.05);
  const double ln = std::sqrt(lx * lx + ly * ly + 1.0);
  sc.light = {lx / ln, ly / ln, 1.0 / ln};

  const int n_shapes = rng.range(2, 4);
  for (int i = 0; i < n_shapes; ++i) {
    SceneShape s;
    s.cls = rng.range(1, 4);
    s.cx = rng.uniform(0.2, 0.8);
    s.cy = rng.uniform(0.2, 0.8);
    s.level = 0.5 + 0.12 * i;
    s.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    switch (s.cls) {
      case kDisk:
        s.size = rng.uniform(0.12, 0.25);
        s.amplitude = rng.uniform(0.01, 0.04);
        break;
      case kSquare:
        s.size = rng.uniform(0.1, 0.2);
        s.amplitude = rng.uniform(-0.03, 0.03);
        break;
      case kTriangle: {
        s.size = rng.uniform(0.15, 0.27);
        for (int v = 0; v < 3; ++v) {
          const double a = s.angle + v * 2.0 * std::numbers::pi / 3.0 + rng.uniform(-0.3, 0.3);
          s.tri[static_cast<std::size_t>(2 * v)] = s.cx + s.size * std::cos(a);
          s.tri[static_cast<std::size_t>(2 * v + 1)] = s.cy + s.size * std::sin(a);
        }
        break;
      }
      case kRing:
        s.size = rng.uniform(0.15, 0.26);
        s.inner = s.size * rng.uniform(0.45, 0.6);
        s.amplitude = rng.uniform(0.02, 0.04);
        break;
    }
    for (int c = 0; c < 3; ++c) s.color[static_cast<std::size_t>(c)] = kClassColor[static_cast<std::size_t>(s.cls)][static_cast<std::size_t>(c)] + rng.uniform(-0.08, 0.08);
    sc.shapes.push_back(s);
  }
  return sc;
}

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

/// Height and analytic gradient of shape `s` at (u, v) if inside.
bool shape_height(const SceneShape& s, double u, double v, double& z, double& dzu, double& dzv) {
  const double dx = u - s.cx, dy = v - s.cy;
  switch (s.cls) {
    case kDisk: {
      const double r2 = dx * dx + dy * dy;
      if (r2 >= s.size * s.size) return false;
      const double inv = 1.0 / (s.size * s.size);
      z = s.level + s.amplitude * (1.0 - r2 * inv);
      dzu = -2.0 * s.amplitude * dx * inv;
      dzv = -2.0 * s.amplitude * dy * inv;
      return true;
    }
    case kSquare: {
      const double c = std::cos(s.angle), sn = std::sin(s.angle);
      const double p1 = c * dx + sn * dy, p2 = -sn * dx + c * dy;
      if (std::abs(p1) >= s.size || std::abs(p2) >= s.size) return false;
      z = s.level + s.amplitude * p1 / s.size;
      dzu = s.amplitude * c / s.size;
      dzv = s.amplitude * sn / s.size;
      return true;
    }
    case kTriangle: {
      const auto& t = s.tri;
      const double e0 = edge(t[0], t[1], t[2], t[3], u, v);
      const double e1 = edge(t[2], t[3], t[4], t[5], u, v);
      const double e2 = edge(t[4], t[5], t[0], t[1], u, v);
      const bool inside = (e0 > 0 && e1 > 0 && e2 > 0) || (e0 < 0 && e1 < 0 && e2 < 0);
      if (!inside) return false;
      z = s.level;
      dzu = dzv = 0.0;
      return true;
    }
    case kRing: {
      const double r = std::sqrt(dx * dx + dy * dy);
      if (r <= s.inner || r >= s.size) return false;
      const double w = s.size - s.inner;
      const double phase = std::numbers::pi * (r - s.inner) / w;
      z = s.level + s.amplitude * std::sin(phase);
      const double dzdr = s.amplitude * std::numbers::pi / w * std::cos(phase);
      dzu = dzdr * dx / r;
      dzv = dzdr * dy / r;
      return true;
    }
  }
  return false;
}

struct PixelGeometry {
  double z, dzu, dzv;
  int region;  // -1 background
};

PixelGeometry pixel_geometry(const Scene& sc, double u, double v) {
  PixelGeometry g;
  const double tpf = 2.0 * std::numbers::pi * sc.bf;
  const double su = std::sin(tpf * u + sc.bp1), cu = std::cos(tpf * u + sc.bp1);
  const double sv = std::sin(tpf * v + sc.bp2), cv = std::cos(tpf * v + sc.bp2);
  g.z = sc.b0 + sc.bx * (u - 0.5) + sc.by * (v - 0.5) + sc.ba * su * cv;
  g.dzu = sc.bx + sc.ba * tpf * cu * cv;
  g.dzv = sc.by - sc.ba * tpf * su * sv;
  g.region = -1;
  for (std::size_t i = 0; i < sc.shapes.size(); ++i) {
    double z, du, dv;
    if (shape_height(sc.shapes[i], u, v, z, du, dv)) {
      g.z = z;
      g.dzu = du;
      g.dzv = dv;
      g.region = static_cast<int>(i);
    }
  }
  return g;
}

void validate_dense_params(int n_images, int hw) {
  if (n_images < 1) throw ConfigError("generate_dense_suite: n_images must be >= 1");
  if (hw < 16 || hw > 128) throw ConfigError("generate_dense_suite: hw must be in [16, 128]");
  if (hw % 4 != 0) throw ConfigError("generate_dense_suite: hw must be a multiple of 4");
}

}  // namespace

HeightField dense_height_field(std::uint64_t seed, int index, int hw) {
  const Scene sc = make_scene(seed, index);
  HeightField hf;
  hf.hw = hw;
  const std::size_t n = static_cast<std::size_t>(hw) * hw;
  hf.height.resize(n);
  hf.du.resize(n);
  hf.dv.resize(n);
  hf.region.resize(n);
  for (int y = 0; y < hw; ++y)
    for (int x = 0; x < hw; ++x) {
      const auto g = pixel_geometry(sc, (x + 0.5) / hw, (y + 0.5) / hw);
      const std::size_t p = static_cast<std::size_t>(y * hw + x);
      hf.height[p] = g.z;
      hf.du[p] = g.dzu;
      hf.dv[p] = g.dzv;
      hf.region[p] = g.region;
    }
  return hf;
}

DatasetSuite generate_dense_suite(std::uint64_t seed, int n_images, int hw) {
  validate_dense_params(n_images, hw);
  DatasetSuite suite;
  suite.mode = SuiteMode::mtl;
  suite.seed = seed;
  suite.image_size = hw;
  suite.tasks = {
      {"seg", TaskKind::dense, kSegClasses, hw, hw, TaskLoss::cross_entropy, TaskMetric::miou, false},
      {"depth", TaskKind::dense, 1, hw, hw, TaskLoss::l1, TaskMetric::abs_err, true},
      {"normals", TaskKind::dense, 3, hw, hw, TaskLoss::cosine_normals, TaskMetric::mean_angle_err, true},
  };

  int n_val = 0, n_test = 0;
  if (n_images >= 3) {
    n_val = std::max(1, n_images * 15 / 100);
    n_test = std::max(1, n_images * 15 / 100);
  } else if (n_images == 2) {
    n_test = 1;
  }
  const int n_train = n_images - n_val - n_test;

  const std::size_t plane = static_cast<std::size_t>(hw) * hw;
  for (int i = 0; i < n_images; ++i) {
    const Scene sc = make_scene(seed, i);
    Rng noise(derive_seed(seed, "dense/noise", static_cast<std::uint64_t>(i)));
    LabeledSample s;
    s.image = Tensor({3, hw, hw});
    Label seg, depth, normals;
    seg.ints.resize(plane);
    depth.floats.resize(plane);
    normals.floats.resize(3 * plane);
    for (int y = 0; y < hw; ++y) {
      for (int x = 0; x < hw; ++x) {
        const auto g = pixel_geometry(sc, (x + 0.5) / hw, (y + 0.5) / hw);
        const std::size_t p = static_cast<std::size_t>(y * hw + x);
        const double nx = -kReliefScale * g.dzu, ny = -kReliefScale * g.dzv;
        const double nn = std::sqrt(nx * nx + ny * ny + 1.0);
        const std::array<double, 3> nrm = {nx / nn, ny / nn, 1.0 / nn};
        const int cls = g.region < 0 ? 0 : sc.shapes[static_cast<std::size_t>(g.region)].cls;
        seg.ints[p] = cls;
        depth.floats[p] = static_cast<float>(1.0 - g.z);
        for (int c = 0; c < 3; ++c) normals.floats[c * plane + p] = static_cast<float>(nrm[static_cast<std::size_t>(c)]);

        const auto& albedo = g.region < 0 ? sc.bg_color : sc.shapes[static_cast<std::size_t>(g.region)].color;
        const double lambert = std::max(0.0, nrm[0] * sc.light[0] + nrm[1] * sc.light[1] + nrm[2] * sc.light[2]);
        const double shade = (0.3 + 0.7 * lambert) * (0.55 + 0.45 * g.z);
        for (int c = 0; c < 3; ++c) {
          const double v = albedo[static_cast<std::size_t>(c)] * shade + 0.02 * noise.normal();
          s.image[c * plane + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    s.labels.emplace("seg", std::move(seg));
    s.labels.emplace("depth", std::move(depth));
    s.labels.emplace("normals", std::move(normals));
    const Split sp = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    suite.splits[sp].push_back(std::move(s));
  }
  for (Split sp : {Split::train, Split::val, Split::test}) suite.splits.try_emplace(sp);
  return suite;
}

// --- domain generator --------------------------------------------------------

namespace {

using Rgb = std::array<double, 3>;

Rgb random_color(Rng& rng, double lo = 0.15, double hi = 0.95) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

/// Class prototype: a bag of style-specific parameters.
struct Prototype {
  std::vector<double> p;
  std::vector<Rgb> colors;
};

enum class Style { strokes, blobs, grid, rings, dots };

std::string style_name(Style s) {
  switch (s) {
    case Style::strokes: return "strokes";
    case Style::blobs: return "textured_blobs";
    case Style::grid: return "color_grid";
    case Style::rings: return "radial_rings";
    case Style::dots: return "dot_constellations";
  }
  return "?";
}

Prototype make_prototype(Style style, Rng& rng) {
  Prototype pr;
  switch (style) {
    case Style::strokes:
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) pr.p.push_back(rng.uniform(0.15, 0.85));
      pr.colors = {random_color(rng, 0.5, 1.0)};
      break;
    case Style::blobs:
      pr.p = {rng.uniform(2.0, 6.0), rng.uniform(0.0, std::numbers::pi), rng.uniform(0.2, 0.38),
              rng.uniform(0.2, 0.38)};
      pr.colors = {random_color(rng), random_color(rng)};
      break;
    case Style::grid: {
      const Rgb palette[3] = {random_color(rng), random_color(rng), random_color(rng)};
      for (int i = 0; i < 16; ++i) pr.colors.push_back(palette[rng.below(3)]);
      break;
    }
    case Style::rings:
      pr.p = {rng.uniform(1.5, 5.0), static_cast<double>(rng.range(0, 4)), rng.uniform(-0.1, 0.1),
              rng.uniform(-0.1, 0.1)};
      pr.colors = {random_color(rng), random_color(rng)};
      break;
    case Style::dots:
      for (int i = 0; i < 5; ++i) {
        pr.p.push_back(rng.uniform(0.15, 0.85));
        pr.p.push_back(rng.uniform(0.15, 0.85));
        pr.colors.push_back(random_color(rng, 0.3, 1.0));
      }
      break;
  }
  return pr;
}

double seg_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy + 1e-12), 0.0, 1.0);
  const double dx = px - ax - t * vx, dy = py - ay - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

double smooth_inside(double d, double width) {
  return std::clamp((width - d) / 0.02 + 0.5, 0.0, 1.0);
}

void render_sample(Style style, const Prototype& pr, const std::array<int, 3>& perm, Rng& rng,
                   Tensor& img) {
  const int hw = img.dim(1);
  const std::size_t plane = static_cast<std::size_t>(hw) * hw;
  const double tx = rng.uniform(-0.06, 0.06), ty = rng.uniform(-0.06, 0.06);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double width = rng.uniform(0.04, 0.07);
  const double rot = rng.uniform(-0.15, 0.15);
  const double gain = rng.uniform(0.85, 1.1);
  const Rgb bg = {rng.uniform(0.0, 0.15), rng.uniform(0.0, 0.15), rng.uniform(0.0, 0.15)};
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      const double u = (x + 0.5) / hw - tx, v = (y + 0.5) / hw - ty;
      Rgb c = bg;
      switch (style) {
        case Style::strokes: {
          double a = 0.0;
          for (int s = 0; s < 3; ++s) {
            const double* q = &pr.p[static_cast<std::size_t>(4 * s)];
            a = std::max(a, smooth_inside(seg_distance(u, v, q[0], q[1], q[2], q[3]), width));
          }
          for (int k = 0; k < 3; ++k) c[k] = c[k] * (1 - a) + a * pr.colors[0][k];
          break;
        }
        case Style::blobs: {
          const double du = u - 0.5, dv = v - 0.5;
          const double e = du * du / (pr.p[2] * pr.p[2]) + dv * dv / (pr.p[3] * pr.p[3]);
          const double a = std::clamp((1.0 - e) * 4.0, 0.0, 1.0);
          const double th = pr.p[1] + rot;
          const double t = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * pr.p[0] *
                                                    (du * std::cos(th) + dv * std::sin(th)) + phase);
          for (int k = 0; k < 3; ++k) {
            const double tex = pr.colors[0][k] * t + pr.colors[1][k] * (1 - t);
            c[k] = c[k] * (1 - a) + a * tex;
          }
          break;
        }
        case Style::grid: {
          const int gx = std::clamp(static_cast<int>(std::floor((u + tx * 0.5) * 4.0)), 0, 3);
          const int gy = std::clamp(static_cast<int>(std::floor((v + ty * 0.5) * 4.0)), 0, 3);
          c = pr.colors[static_cast<std::size_t>(gy * 4 + gx)];
          break;
        }
        case Style::rings: {
          const double du = u - 0.5 - pr.p[2], dv = v - 0.5 - pr.p[3];
          const double r = std::sqrt(du * du + dv * dv);
          const double ang = std::atan2(dv, du);
          const double t = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * pr.p[0] * r * 2.0 +
                                                    pr.p[1] * ang + 0.3 * phase);
          for (int k = 0; k < 3; ++k) c[k] = pr.colors[0][k] * t + pr.colors[1][k] * (1 - t);
          break;
        }
        case Style::dots: {
          for (int s = 0; s < 5; ++s) {
            const double dx = u - pr.p[static_cast<std::size_t>(2 * s)];
            const double dy = v - pr.p[static_cast<std::size_t>(2 * s + 1)];
            const double a = smooth_inside(std::sqrt(dx * dx + dy * dy), width + 0.03);
            for (int k = 0; k < 3; ++k) c[k] = c[k] * (1 - a) + a * pr.colors[static_cast<std::size_t>(s)][k];
          }
          break;
        }
      }
      const std::size_t p = static_cast<std::size_t>(y * hw + x);
      for (int k = 0; k < 3; ++k) {
        const double val = gain * c[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] + 0.03 * rng.normal();
        img[static_cast<std::size_t>(k) * plane + p] = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
}

constexpr std::array<std::array<int, 3>, 6> kPermutations = {{
    {0, 1, 2}, {1, 2, 0}, {2, 0, 1}, {0, 2, 1}, {2, 1, 0}, {1, 0, 2}}};

}  // namespace

DatasetSuite generate_domain_suite(std::uint64_t seed, int n_domains, int n_classes,
                                   int n_per_class, const DomainSuiteOptions& opts) {
  if (n_domains < 2) throw ConfigError("generate_domain_suite: n_domains must be >= 2");
  if (n_classes < 4) throw ConfigError("generate_domain_suite: n_classes must be >= 4");
  if (n_per_class < 3) throw ConfigError("generate_domain_suite: n_per_class must be >= 3");
  if (opts.image_size < 16 || opts.image_size > 128 || opts.image_size % 4 != 0) {
    throw ConfigError("generate_domain_suite: image_size must be a multiple of 4 in [16, 128]");
  }
  if (opts.meta_classes_per_domain < 0) {
    throw ConfigError("generate_domain_suite: meta_classes_per_domain must be >= 0");
  }
  DatasetSuite suite;
  suite.mode = SuiteMode::mdl;
  suite.seed = seed;
  suite.image_size = opts.image_size;
  for (Split sp : {Split::train, Split::val, Split::test, Split::meta_test}) suite.splits.try_emplace(sp);

  constexpr Style kSeenStyles[4] = {Style::strokes, Style::blobs, Style::grid, Style::rings};
  const int n_val = std::max(1, static_cast<int>(std::lround(opts.val_fraction * n_per_class)));
  const int n_test = n_val;
  const int n_train = n_per_class - n_val - n_test;
  if (n_train < 1) throw ConfigError("generate_domain_suite: n_per_class too small for the splits");

  int offset = 0;
  for (int d = 0; d <= n_domains; ++d) {
    const bool withheld = d == n_domains;
    DomainInfo info;
    const Style style = withheld ? Style::dots : kSeenStyles[d % 4];
    info.style = style_name(style);
    info.withheld = withheld;
    info.label_offset = offset;
    info.n_train_classes = withheld ? 0 : n_classes;
    info.n_meta_classes = withheld ? n_classes : opts.meta_classes_per_domain;
    if (!withheld) {
      info.task_id = "domain" + std::to_string(d);
      suite.tasks.push_back({info.task_id, TaskKind::classification, n_classes, 1, 1,
                             TaskLoss::cross_entropy, TaskMetric::accuracy, false});
    }
    const auto& perm = kPermutations[static_cast<std::size_t>(withheld ? 0 : (d / 4) % 6)];
    const int total_classes = info.n_train_classes + info.n_meta_classes;
    for (int c = 0; c < total_classes; ++c) {
      Rng proto_rng(derive_seed(seed, "domain/proto/" + std::to_string(d), static_cast<std::uint64_t>(c)));
      const Prototype pr = make_prototype(style, proto_rng);
      const bool meta = c >= info.n_train_classes;
      for (int k = 0; k < n_per_class; ++k) {
        Rng rng(derive_seed(seed, "domain/sample/" + std::to_string(d) + "/" + std::to_string(c),
                            static_cast<std::uint64_t>(k)));
        LabeledSample s;
        s.image = Tensor({3, opts.image_size, opts.image_size});
        render_sample(style, pr, perm, rng, s.image);
        s.domain = d;
        s.class_label = offset + c;
        Split sp = Split::meta_test;
        if (!meta) {
          Label l;
          l.ints = {c};
          s.labels.emplace(info.task_id, std::move(l));
          sp = k < n_train ? Split::train : (k < n_train + n_val ? Split::val : Split::test);
        }
        suite.splits[sp].push_back(std::move(s));
      }
    }
    offset += total_classes;
    suite.domains.push_back(std::move(info));
  }
  return suite;
}

// --- batches -----------------------------------------------------------------

std::vector<int> domain_quota(int n_domains, int batch_size, std::optional<int> anchor,
                              double anchor_share) {
  if (n_domains < 1) throw ConfigError("domain_quota: no domains");
  if (batch_size < n_domains) {
    throw ConfigError("batch_size (" + std::to_string(batch_size) +
                      ") must be >= number of domains (" + std::to_string(n_domains) + ")");
  }
  std::vector<int> q(static_cast<std::size_t>(n_domains), 0);
  auto spread = [&](int total, std::optional<int> skip) {
    const int n = n_domains - (skip ? 1 : 0);
    if (n == 0) return;
    int idx = 0;
    for (int d = 0; d < n_domains; ++d) {
      if (skip && d == *skip) continue;
      q[static_cast<std::size_t>(d)] = total / n + (idx < total % n ? 1 : 0);
      ++idx;
    }
  };
  if (anchor) {
    if (*anchor < 0 || *anchor >= n_domains) throw ConfigError("anchor domain out of range");
    if (!(anchor_share > 0.0 && anchor_share < 1.0)) throw ConfigError("anchor_share must be in (0, 1)");
    int a = static_cast<int>(std::lround(anchor_share * batch_size));
    a = std::clamp(a, 1, batch_size - (n_domains - 1));
    q[static_cast<std::size_t>(*anchor)] = a;
    spread(batch_size - a, anchor);
  } else {
    spread(batch_size, std::nullopt);
  }
  return q;
}

BatchStream::BatchStream(const DatasetSuite& suite, BatchOptions opts)
    : suite_(&suite), opts_(std::move(opts)) {
  const auto& samples = suite.split(opts_.split);
  if (opts_.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<int> pool;
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    if (opts_.only_task && !samples[static_cast<std::size_t>(i)].labels.contains(*opts_.only_task)) continue;
    pool.push_back(i);
  }
  if (pool.empty()) {
    throw IterationError("split '" + to_string(opts_.split) + "' has no samples to batch");
  }
  const bool mixed = suite.mode == SuiteMode::mdl && !opts_.only_task && opts_.split != Split::meta_test;
  if (!mixed) {
    if (opts_.shuffle) {
      Rng rng(derive_seed(opts_.seed, "batches", static_cast<std::uint64_t>(opts_.epoch)));
      rng.shuffle(pool);
    }
    for (std::size_t i = 0; i < pool.size(); i += static_cast<std::size_t>(opts_.batch_size)) {
      const std::size_t end = std::min(pool.size(), i + static_cast<std::size_t>(opts_.batch_size));
      plan_.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(i), pool.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return;
  }

  // Mixed multi-domain batches with a fixed per-domain quota.
  std::vector<std::string> active = opts_.task_subset;
  if (active.empty())
    for (const auto& t : suite.tasks) active.push_back(t.id);
  for (const auto& id : active)
    if (suite.task_index(id) < 0) throw ConfigError("batch task subset names unknown task '" + id + "'");
  const int n_domains = static_cast<int>(active.size());
  std::optional<int> anchor;
  if (opts_.anchor_task) {
    const auto it = std::find(active.begin(), active.end(), *opts_.anchor_task);
    if (it == active.end()) throw ConfigError("anchor task '" + *opts_.anchor_task + "' not among the batched tasks");
    anchor = static_cast<int>(it - active.begin());
  }
  const auto quota = domain_quota(n_domains, opts_.batch_size, anchor, opts_.anchor_share);
  std::vector<std::vector<int>> by_domain(static_cast<std::size_t>(n_domains));
  pool.clear();
  for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    for (int t = 0; t < n_domains; ++t)
      if (s.labels.contains(active[static_cast<std::size_t>(t)])) {
        by_domain[static_cast<std::size_t>(t)].push_back(i);
        pool.push_back(i);
        break;
      }
  }
  for (int t = 0; t < n_domains; ++t) {
    if (by_domain[static_cast<std::size_t>(t)].empty()) {
      throw IterationError("task '" + active[static_cast<std::size_t>(t)] + "' has no samples in split '" +
                           to_string(opts_.split) + "'");
    }
  }
  const std::size_t n_batches = std::max<std::size_t>(1, pool.size() / static_cast<std::size_t>(opts_.batch_size));
  std::vector<std::vector<int>> order(static_cast<std::size_t>(n_domains));
  std::vector<std::size_t> pos(static_cast<std::size_t>(n_domains), 0);
  std::vector<std::uint64_t> cycle(static_cast<std::size_t>(n_domains), 0);
  auto refill = [&](int t) {
    auto& o = order[static_cast<std::size_t>(t)];
    o = by_domain[static_cast<std::size_t>(t)];
    if (opts_.shuffle) {
      Rng rng(derive_seed(opts_.seed, "batches/" + std::to_string(opts_.epoch) + "/" + std::to_string(t),
                          cycle[static_cast<std::size_t>(t)]++));
      rng.shuffle(o);
    }
    pos[static_cast<std::size_t>(t)] = 0;
  };
  for (int t = 0; t < n_domains; ++t) refill(t);
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::vector<int> rows;
    for (int t = 0; t < n_domains; ++t) {
      for (int k = 0; k < quota[static_cast<std::size_t>(t)]; ++k) {
        if (pos[static_cast<std::size_t>(t)] >= order[static_cast<std::size_t>(t)].size()) refill(t);
        rows.push_back(order[static_cast<std::size_t>(t)][pos[static_cast<std::size_t>(t)]++]);
      }
    }
    plan_.push_back(std::move(rows));
  }
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= plan_.size()) return std::nullopt;
  return make_batch(*suite_, opts_.split, plan_[cursor_++]);
}

BatchStream make_batches(const DatasetSuite& suite, const BatchOptions& opts) {
  return BatchStream(suite, opts);
}

Tensor stack_images(const std::vector<LabeledSample>& samples, std::span<const int> rows) {
  if (rows.empty()) throw IterationError("cannot stack an empty batch");
  const Shape& s = samples.at(static_cast<std::size_t>(rows[0])).image.shape();
  Tensor out({static_cast<int>(rows.size()), s[0], s[1], s[2]});
  const std::size_t n = shape_numel(s);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& img = samples.at(static_cast<std::size_t>(rows[i])).image;
    if (img.shape() != s) throw ShapeError("images in a batch must share one shape");
    std::copy(img.vec().begin(), img.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

Batch make_batch(const DatasetSuite& suite, Split split, std::vector<int> rows) {
  const auto& samples = suite.split(split);
  Batch b;
  b.images = stack_images(samples, rows);
  for (const auto& t : suite.tasks) {
    std::vector<int> tr;
    std::vector<const Label*> ls;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& lab = samples[static_cast<std::size_t>(rows[i])].labels;
      const auto it = lab.find(t.id);
      if (it == lab.end()) continue;
      tr.push_back(static_cast<int>(i));
      ls.push_back(&it->second);
    }
    if (!tr.empty()) {
      b.task_rows.emplace(t.id, std::move(tr));
      b.labels.emplace(t.id, std::move(ls));
    }
  }
  b.indices = std::move(rows);
  return b;
}

}  // namespace unirep
