#include "bhfl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "bhfl/hash.hpp"

namespace bhfl {

namespace fs = std::filesystem;

Dataset Dataset::subset(std::span<const int> indices) const {
  Dataset out;
  out.classes = classes;
  const Shape ss = sample_shape();
  const std::size_t per = shape_numel(ss);
  Shape shape{static_cast<int>(indices.size())};
  shape.insert(shape.end(), ss.begin(), ss.end());
  if (indices.empty()) return out;
  out.images = Tensor(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(images.data() + static_cast<std::size_t>(indices[i]) * per, per,
                out.images.data() + i * per);
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

std::string SyntheticSpec::key() const {
  std::ostringstream os;
  os << "synthetic-v1:" << image_size << ':' << classes << ':' << train_per_class << ':'
     << test_per_class << ':' << seed << ':' << jitter << ':' << noise << ':' << clutter;
  return os.str();
}

namespace {

struct Point {
  double x, y;
};

using Stroke = std::vector<Point>;  // quadratic Bezier control points a, c, b

std::vector<Point> polyline(const Stroke& s, int segments = 8) {
  std::vector<Point> pts;
  for (int i = 0; i <= segments; ++i) {
    const double t = static_cast<double>(i) / segments, u = 1 - t;
    pts.push_back({u * u * s[0].x + 2 * u * t * s[1].x + t * t * s[2].x,
                   u * u * s[0].y + 2 * u * t * s[1].y + t * t * s[2].y});
  }
  return pts;
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

void draw(std::vector<double>& canvas, int size, const Stroke& s, double width, double intensity) {
  const auto pts = polyline(s);
  for (int py = 0; py < size; ++py) {
    for (int px = 0; px < size; ++px) {
      const Point p{(px + 0.5) / size, (py + 0.5) / size};
      double d = 1e9;
      for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        d = std::min(d, segment_distance(p, pts[i], pts[i + 1]));
      }
      const double v = intensity * std::exp(-d * d / (2 * width * width));
      double& c = canvas[py * size + px];
      c = std::max(c, v);
    }
  }
}

Stroke random_stroke(Rng& rng, double lo, double hi) {
  Stroke s;
  for (int i = 0; i < 3; ++i) s.push_back({rng.uniform(lo, hi), rng.uniform(lo, hi)});
  return s;
}

Dataset render(const SyntheticSpec& spec, const std::vector<std::vector<Stroke>>& protos,
               int per_class, Rng& rng) {
  const int n = per_class * spec.classes, sz = spec.image_size;
  Dataset d;
  d.classes = spec.classes;
  d.images = Tensor({n, 1, sz, sz});
  std::vector<double> canvas(sz * sz);
  int idx = 0;
  for (int k = 0; k < per_class; ++k) {
    for (int c = 0; c < spec.classes; ++c, ++idx) {
      std::fill(canvas.begin(), canvas.end(), 0.0);
      const double width = 0.06 * rng.uniform(0.75, 1.3);
      const double dx = rng.normal(0, spec.jitter), dy = rng.normal(0, spec.jitter);
      for (const auto& proto : protos[c]) {
        Stroke s = proto;
        for (auto& p : s) {
          p.x += dx + rng.normal(0, spec.jitter);
          p.y += dy + rng.normal(0, spec.jitter);
        }
        draw(canvas, sz, s, width, rng.uniform(0.7, 1.0));
      }
      if (rng.uniform() < spec.clutter) {
        Stroke s = random_stroke(rng, 0.05, 0.95);
        s[2] = {s[0].x + rng.normal(0, 0.2), s[0].y + rng.normal(0, 0.2)};
        draw(canvas, sz, s, width, rng.uniform(0.3, 0.6));
      }
      float* out = d.images.data() + static_cast<std::size_t>(idx) * sz * sz;
      for (int i = 0; i < sz * sz; ++i) {
        out[i] = static_cast<float>(std::clamp(canvas[i] + rng.normal(0, spec.noise), 0.0, 1.0));
      }
      d.labels.push_back(c);
    }
  }
  return d;
}

// --- binary cache ---

constexpr char kMagic[8] = {'B', 'H', 'F', 'L', 'D', 'S', '1', '\0'};

void put_dataset(std::string& buf, const Dataset& d) {
  const std::int32_t hdr[5] = {d.images.dim(0), d.images.dim(1), d.images.dim(2),
                               d.images.dim(3), d.classes};
  buf.append(reinterpret_cast<const char*>(hdr), sizeof hdr);
  buf.append(reinterpret_cast<const char*>(d.images.data()), d.images.size() * sizeof(float));
  std::vector<std::int32_t> labels(d.labels.begin(), d.labels.end());
  buf.append(reinterpret_cast<const char*>(labels.data()), labels.size() * sizeof(std::int32_t));
}

bool get_dataset(const std::string& buf, std::size_t& pos, Dataset& d) {
  std::int32_t hdr[5];
  if (pos + sizeof hdr > buf.size()) return false;
  std::memcpy(hdr, buf.data() + pos, sizeof hdr);
  pos += sizeof hdr;
  for (int i = 0; i < 4; ++i) {
    if (hdr[i] <= 0) return false;
  }
  const std::size_t n = static_cast<std::size_t>(hdr[0]) * hdr[1] * hdr[2] * hdr[3];
  if (pos + n * sizeof(float) + hdr[0] * sizeof(std::int32_t) > buf.size()) return false;
  std::vector<float> data(n);
  std::memcpy(data.data(), buf.data() + pos, n * sizeof(float));
  pos += n * sizeof(float);
  std::vector<std::int32_t> labels(hdr[0]);
  std::memcpy(labels.data(), buf.data() + pos, labels.size() * sizeof(std::int32_t));
  pos += labels.size() * sizeof(std::int32_t);
  d.images = Tensor({hdr[0], hdr[1], hdr[2], hdr[3]}, std::move(data));
  d.labels.assign(labels.begin(), labels.end());
  d.classes = hdr[4];
  return true;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

DatasetSplit make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.image_size < 4 || spec.train_per_class < 1 ||
      spec.test_per_class < 1) {
    throw ConfigError("invalid synthetic dataset parameters");
  }
  Rng rng(spec.seed);
  std::vector<std::vector<Stroke>> protos(spec.classes);
  for (auto& p : protos) {
    const int strokes = 2 + static_cast<int>(rng.index(2));
    for (int s = 0; s < strokes; ++s) p.push_back(random_stroke(rng, 0.15, 0.85));
  }
  Rng train_rng(derive_seed(spec.seed, 1)), test_rng(derive_seed(spec.seed, 2));
  return {render(spec, protos, spec.train_per_class, train_rng),
          render(spec, protos, spec.test_per_class, test_rng)};
}

fs::path cache_dir() {
  if (const char* env = std::getenv("BHFL_CACHE_DIR"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache/bhfl";
  return fs::temp_directory_path() / "bhfl-cache";
}

DatasetSplit load_synthetic_cached(const SyntheticSpec& spec, const fs::path& dir) {
  const std::string key = spec.key();
  const fs::path file = dir / ("synthetic-" + hex64(fnv1a64(key)) + ".bin");
  if (fs::exists(file)) {
    const std::string buf = read_file(file);
    const std::size_t body = buf.size() >= sizeof(kMagic) + 8 ? buf.size() - 8 : 0;
    std::uint64_t stored = 0;
    if (body > 0) std::memcpy(&stored, buf.data() + body, 8);
    if (body > 0 && std::memcmp(buf.data(), kMagic, sizeof kMagic) == 0 &&
        stored == fnv1a64(buf.data(), body)) {
      std::size_t pos = sizeof kMagic;
      DatasetSplit s;
      if (get_dataset(buf, pos, s.train) && get_dataset(buf, pos, s.test) && pos == body) return s;
    }
    // corrupt or stale entry; regenerate below
  }
  DatasetSplit s = make_synthetic(spec);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!ec) {
    std::string buf(kMagic, sizeof kMagic);
    put_dataset(buf, s.train);
    put_dataset(buf, s.test);
    const std::uint64_t sum = fnv1a64(buf.data(), buf.size());
    buf.append(reinterpret_cast<const char*>(&sum), 8);
    const fs::path tmp = file.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
    fs::rename(tmp, file, ec);
  }
  return s;
}

namespace {

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

// Bilinear resample of one square grayscale plane.
void resample(const float* src, int from, float* dst, int to) {
  if (from == to) {
    std::copy_n(src, from * from, dst);
    return;
  }
  const double scale = static_cast<double>(from) / to;
  for (int y = 0; y < to; ++y) {
    for (int x = 0; x < to; ++x) {
      // average over the source footprint for downsampling
      const double sy0 = y * scale, sx0 = x * scale;
      double acc = 0, wsum = 0;
      for (int yy = static_cast<int>(sy0); yy < std::min(from, static_cast<int>(std::ceil(sy0 + scale))); ++yy) {
        for (int xx = static_cast<int>(sx0); xx < std::min(from, static_cast<int>(std::ceil(sx0 + scale))); ++xx) {
          const double wy = std::min<double>(yy + 1, sy0 + scale) - std::max<double>(yy, sy0);
          const double wx = std::min<double>(xx + 1, sx0 + scale) - std::max<double>(xx, sx0);
          if (wy <= 0 || wx <= 0) continue;
          acc += wy * wx * src[yy * from + xx];
          wsum += wy * wx;
        }
      }
      dst[y * to + x] = static_cast<float>(wsum > 0 ? acc / wsum : 0.0);
    }
  }
}

Dataset read_mnist_pair(const fs::path& images, const fs::path& labels, int image_size,
                        int per_class) {
  const std::string ib = read_file(images), lb = read_file(labels);
  if (ib.size() < 16 || lb.size() < 8) throw ConfigError("truncated MNIST file " + images.string());
  const auto* ip = reinterpret_cast<const unsigned char*>(ib.data());
  const auto* lp = reinterpret_cast<const unsigned char*>(lb.data());
  if (be32(ip) != 2051 || be32(lp) != 2049) throw ConfigError("bad MNIST magic in " + images.string());
  const int n = static_cast<int>(be32(ip + 4)), rows = static_cast<int>(be32(ip + 8));
  if (static_cast<int>(be32(lp + 4)) != n || rows != static_cast<int>(be32(ip + 12)) ||
      ib.size() < 16 + static_cast<std::size_t>(n) * rows * rows || lb.size() < 8 + static_cast<std::size_t>(n)) {
    throw ConfigError("inconsistent MNIST files in " + images.parent_path().string());
  }
  std::vector<int> taken(10, 0), keep;
  for (int i = 0; i < n; ++i) {
    const int y = lp[8 + i];
    if (y < 10 && taken[y] < per_class) {
      ++taken[y];
      keep.push_back(i);
    }
  }
  Dataset d;
  d.classes = 10;
  d.images = Tensor({static_cast<int>(keep.size()), 1, image_size, image_size});
  std::vector<float> plane(rows * rows);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const unsigned char* px = ip + 16 + static_cast<std::size_t>(keep[k]) * rows * rows;
    for (int j = 0; j < rows * rows; ++j) plane[j] = px[j] / 255.0f;
    resample(plane.data(), rows, d.images.data() + k * image_size * image_size, image_size);
    d.labels.push_back(lp[8 + keep[k]]);
  }
  return d;
}

}  // namespace

DatasetSplit load_mnist(const fs::path& dir, int image_size, int train_per_class,
                        int test_per_class) {
  const fs::path root = dir / "mnist";
  const char* names[4] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                          "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
  for (const char* n : names) {
    if (!fs::exists(root / n)) {
      throw ConfigError("MNIST file " + (root / n).string() +
                        " not found. Download the four IDX files from "
                        "http://yann.lecun.com/exdb/mnist/ (gunzip them) into " +
                        root.string() + ", or set BHFL_CACHE_DIR to a directory containing "
                        "mnist/. Use data.kind = \"synthetic\" to run without downloads.");
    }
  }
  return {read_mnist_pair(root / names[0], root / names[1], image_size, train_per_class),
          read_mnist_pair(root / names[2], root / names[3], image_size, test_per_class)};
}

DatasetSplit load_cifar10(const fs::path& dir, int train_per_class, int test_per_class) {
  const fs::path root = dir / "cifar-10-batches-bin";
  auto read_batches = [&](const std::vector<std::string>& files, int per_class) {
    std::vector<int> taken(10, 0);
    std::vector<float> pixels;
    std::vector<int> labels;
    for (const auto& f : files) {
      const fs::path p = root / f;
      if (!fs::exists(p)) {
        throw ConfigError("CIFAR-10 file " + p.string() +
                          " not found. Download cifar-10-binary.tar.gz from "
                          "https://www.cs.toronto.edu/~kriz/cifar.html and extract it into " +
                          dir.string() + ".");
      }
      const std::string buf = read_file(p);
      constexpr std::size_t rec = 1 + 3072;
      for (std::size_t off = 0; off + rec <= buf.size(); off += rec) {
        const int y = static_cast<unsigned char>(buf[off]);
        if (y >= 10 || taken[y] >= per_class) continue;
        ++taken[y];
        labels.push_back(y);
        for (std::size_t j = 0; j < 3072; ++j) {
          pixels.push_back(static_cast<unsigned char>(buf[off + 1 + j]) / 255.0f);
        }
      }
    }
    Dataset d;
    d.classes = 10;
    d.images = Tensor({static_cast<int>(labels.size()), 3, 32, 32}, std::move(pixels));
    d.labels = std::move(labels);
    return d;
  };
  return {read_batches({"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                        "data_batch_4.bin", "data_batch_5.bin"},
                       train_per_class),
          read_batches({"test_batch.bin"}, test_per_class)};
}

Batch gather_batch(const Dataset& data, std::span<const int> indices, const Augment* augment,
                   Rng& rng) {
  Batch b;
  b.images = data.subset(indices).images;
  for (int i : indices) b.labels.push_back(data.labels[i]);
  if (!augment || (augment->pad == 0 && !augment->hflip && augment->max_rotation_deg == 0)) {
    return b;
  }
  const int c = b.images.dim(1), h = b.images.dim(2), w = b.images.dim(3);
  std::vector<float> tmp(static_cast<std::size_t>(h) * w);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const int oy = augment->pad ? static_cast<int>(rng.index(2 * augment->pad + 1)) - augment->pad : 0;
    const int ox = augment->pad ? static_cast<int>(rng.index(2 * augment->pad + 1)) - augment->pad : 0;
    const bool flip = augment->hflip && rng.uniform() < 0.5;
    const double angle = augment->max_rotation_deg > 0
                             ? rng.uniform(-augment->max_rotation_deg, augment->max_rotation_deg) *
                                   std::numbers::pi / 180.0
                             : 0.0;
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int ch = 0; ch < c; ++ch) {
      float* plane = b.images.data() + (n * c + ch) * static_cast<std::size_t>(h) * w;
      auto at = [&](int y, int x) -> float {
        return (y >= 0 && y < h && x >= 0 && x < w) ? plane[y * w + x] : 0.0f;
      };
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int sx0 = flip ? (w - 1 - x) : x;
          double sy = y + oy, sx = sx0 + ox;
          if (angle != 0.0) {
            const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
            const double ry = sy - cy, rx = sx - cx;
            sy = cy + ca * ry - sa * rx;
            sx = cx + sa * ry + ca * rx;
            const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            tmp[y * w + x] = static_cast<float>(
                (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1)));
          } else {
            tmp[y * w + x] = at(static_cast<int>(sy), static_cast<int>(sx));
          }
        }
      }
      std::copy(tmp.begin(), tmp.end(), plane);
    }
  }
  return b;
}

std::vector<std::vector<int>> partition_iid(const Dataset& data, int clients, std::uint64_t seed) {
  if (clients <= 0) throw ConfigError("client count must be positive");
  std::vector<std::vector<int>> by_class(data.classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(static_cast<int>(i));
  Rng rng(seed);
  std::vector<std::vector<int>> shards(clients);
  int next = 0;
  for (auto& idx : by_class) {
    if (static_cast<int>(idx.size()) < clients) {
      throw ConfigError("a class has " + std::to_string(idx.size()) + " samples, fewer than " +
                        std::to_string(clients) + " clients");
    }
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    const int per = static_cast<int>(idx.size()) / clients;
    std::size_t pos = 0;
    for (int c = 0; c < clients; ++c) {
      shards[c].insert(shards[c].end(), idx.begin() + pos, idx.begin() + pos + per);
      pos += per;
    }
    for (; pos < idx.size(); ++pos) {
      shards[next].push_back(idx[pos]);
      next = (next + 1) % clients;
    }
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return shards;
}

Dataset take_holdout(Dataset& data, int count, std::uint64_t seed) {
  if (count <= 0) return Dataset{Tensor(), {}, data.classes};
  if (static_cast<std::size_t>(count) >= data.size()) throw ConfigError("holdout larger than dataset");
  std::vector<std::vector<int>> by_class(data.classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(static_cast<int>(i));
  Rng rng(seed);
  for (auto& v : by_class) std::shuffle(v.begin(), v.end(), rng.engine());
  std::vector<int> held, rest;
  std::vector<char> mark(data.size(), 0);
  for (int k = 0; static_cast<int>(held.size()) < count; ++k) {
    for (auto& v : by_class) {
      if (k < static_cast<int>(v.size()) && static_cast<int>(held.size()) < count) {
        held.push_back(v[k]);
        mark[v[k]] = 1;
      }
    }
  }
  std::sort(held.begin(), held.end());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!mark[i]) rest.push_back(static_cast<int>(i));
  }
  Dataset out = data.subset(held);
  data = data.subset(rest);
  return out;
}

}  // namespace bhfl
