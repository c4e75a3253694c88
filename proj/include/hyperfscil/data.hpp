#pragma once

// Embedding datasets: binary bundle IO ("FSEB v1"), synthetic generation, and
// session split construction.  Vectors are stored as float32 so that
// write -> load -> write is byte-identical; consumers cast to double.

#include <Eigen/Dense>
#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyperfscil/errors.hpp"
#include "hyperfscil/geometry.hpp"

static_assert(std::endian::native == std::endian::little,
              "bundle IO assumes a little-endian host");

namespace hyperfscil {

using Vec32 = Eigen::VectorXf;

enum class Split : std::uint8_t { kTrain = 0, kTest = 1 };

struct ImageRecord {
  std::uint32_t class_id = 0;
  Split split = Split::kTrain;
  Vec32 vec;
};

struct TextRecord {
  std::uint32_t class_id = 0;
  std::vector<Vec32> templates;  // exactly M entries
};

struct EmbeddingDataset {
  std::uint32_t d_img = 0;
  std::uint32_t d_txt = 0;
  std::uint32_t M = 0;
  std::vector<ImageRecord> images;
  std::map<std::uint32_t, TextRecord> text;       // keyed by class id
  std::vector<std::string> class_names;           // index == class id
  std::vector<std::vector<std::uint32_t>> sessions;
  std::uint32_t k_shot = 0;
  std::uint64_t seed = 0;

  std::uint32_t num_classes() const { return static_cast<std::uint32_t>(class_names.size()); }

  void validate() const {
    std::map<std::uint32_t, std::pair<int, int>> counts;  // class -> (train, test)
    for (const auto& rec : images) {
      if (rec.vec.size() != static_cast<int>(d_img))
        throw DataError("dataset: image record dimension mismatch");
      auto& c = counts[rec.class_id];
      (rec.split == Split::kTrain ? c.first : c.second) += 1;
    }
    for (const auto& [id, rec] : text) {
      if (rec.templates.size() != M)
        throw DataError("dataset: class " + std::to_string(id) + " lacks M templates");
      for (const auto& t : rec.templates)
        if (t.size() != static_cast<int>(d_txt))
          throw DataError("dataset: text template dimension mismatch");
      const auto it = counts.find(id);
      if (it == counts.end() || it->second.first < 1 || it->second.second < 1)
        throw DataError("dataset: class " + std::to_string(id) +
                        " needs >= 1 train and >= 1 test image");
    }
    for (const auto& [id, c] : counts) {
      (void)c;
      if (!text.count(id)) throw DataError("dataset: image class without text record");
    }
  }
};

// Per-class session collisions, ordered by class id.
inline std::vector<std::tuple<std::uint32_t, int, int>> validate_disjoint(
    const EmbeddingDataset& ds) {
  std::map<std::uint32_t, int> first_session;
  std::vector<std::tuple<std::uint32_t, int, int>> violations;
  for (int s = 0; s < static_cast<int>(ds.sessions.size()); ++s)
    for (std::uint32_t id : ds.sessions[s]) {
      const auto [it, inserted] = first_session.emplace(id, s);
      if (!inserted) violations.emplace_back(id, it->second, s);
    }
  std::sort(violations.begin(), violations.end());
  return violations;
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  int num_classes = 24;
  int dim = 16;
  int train_per_class = 25;
  int test_per_class = 10;
  int M = 4;
  int cluster_count = 6;
  double within_std = 0.15;
  double between_scale = 1.0;
  bool fine_grained = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 1 || dim < 1 || train_per_class < 1 || test_per_class < 1 || M < 1 ||
        cluster_count < 1)
      throw ConfigError("synthetic config: all sizes must be positive");
    if (!(within_std > 0.0) || !(between_scale > 0.0))
      throw ConfigError("synthetic config: scales must be positive");
  }
};

// Class means are drawn hierarchically: cluster centers on a sphere of radius
// between_scale, class means offset from their (round-robin) cluster center.
// Fine-grained mode shrinks the offsets so classes crowd inside clusters.
inline EmbeddingDataset gen_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto gaussian = [&](int d) {
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = n01(rng);
    return v;
  };
  auto unit = [&](int d) {
    Vec v = gaussian(d);
    return Vec(v / v.norm());
  };

  const double offset = cfg.between_scale * (cfg.fine_grained ? 0.12 : 0.6);
  // Templates sit near the class mean but carry their own noise, wider than the
  // image noise: handcrafted prompts are a blunter instrument than real samples,
  // which is what leaves prompt training room to improve on the frozen baseline.
  const double text_noise = cfg.within_std * 3.0;

  std::vector<Vec> centers;
  for (int k = 0; k < cfg.cluster_count; ++k) centers.push_back(cfg.between_scale * unit(cfg.dim));

  EmbeddingDataset ds;
  ds.d_img = static_cast<std::uint32_t>(cfg.dim);
  ds.d_txt = static_cast<std::uint32_t>(cfg.dim);
  ds.M = static_cast<std::uint32_t>(cfg.M);
  ds.seed = cfg.seed;

  std::vector<Vec> means;
  for (int c = 0; c < cfg.num_classes; ++c) {
    const Vec mean = centers[c % cfg.cluster_count] + offset * unit(cfg.dim);
    means.push_back(mean);
    ds.class_names.push_back("class_" + std::to_string(c));
    TextRecord txt;
    txt.class_id = static_cast<std::uint32_t>(c);
    for (int m = 0; m < cfg.M; ++m)
      txt.templates.push_back((mean + text_noise * gaussian(cfg.dim)).cast<float>());
    ds.text.emplace(txt.class_id, std::move(txt));
  }
  for (int c = 0; c < cfg.num_classes; ++c) {
    for (int i = 0; i < cfg.train_per_class; ++i)
      ds.images.push_back({static_cast<std::uint32_t>(c), Split::kTrain,
                           (means[c] + cfg.within_std * gaussian(cfg.dim)).cast<float>()});
    for (int i = 0; i < cfg.test_per_class; ++i)
      ds.images.push_back({static_cast<std::uint32_t>(c), Split::kTest,
                           (means[c] + cfg.within_std * gaussian(cfg.dim)).cast<float>()});
  }
  ds.sessions = {{}};
  ds.sessions[0].resize(cfg.num_classes);
  for (int c = 0; c < cfg.num_classes; ++c) ds.sessions[0][c] = static_cast<std::uint32_t>(c);
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Session splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  int n_base = 0;
  int n_way = 0;
  int k_shot = 0;
  int T = 0;  // incremental session count

  void validate() const {
    if (n_base < 1 || k_shot < 1 || T < 0 || (T > 0 && n_way < 1))
      throw ConfigError("split spec: invalid shape");
  }
};

namespace detail {

// Deterministic Fisher-Yates (std::shuffle is implementation-defined).
template <typename T>
void fisher_yates(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace detail

// Assigns the first n_base class ids to session 0 and n_way per incremental
// session after that; incremental train sets are subsampled to k_shot records
// per class (unselected train records are dropped).  Test sets are untouched.
inline void make_splits(EmbeddingDataset& ds, const SplitSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<std::uint32_t> ids;
  for (const auto& [id, rec] : ds.text) {
    (void)rec;
    ids.push_back(id);
  }
  if (static_cast<int>(ids.size()) < spec.n_base + spec.n_way * spec.T)
    throw DataError("make_splits: not enough classes for the requested shape");

  ds.sessions.assign(1 + spec.T, {});
  int cursor = 0;
  for (int i = 0; i < spec.n_base; ++i) ds.sessions[0].push_back(ids[cursor++]);
  for (int t = 1; t <= spec.T; ++t)
    for (int i = 0; i < spec.n_way; ++i) ds.sessions[t].push_back(ids[cursor++]);

  // k-shot subsampling for incremental classes, seeded and recorded.
  std::mt19937_64 rng(seed);
  std::map<std::uint32_t, int> session_of;
  for (int t = 0; t < static_cast<int>(ds.sessions.size()); ++t)
    for (std::uint32_t id : ds.sessions[t]) session_of[id] = t;

  std::map<std::uint32_t, std::vector<std::size_t>> train_idx;
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    if (ds.images[i].split == Split::kTrain) train_idx[ds.images[i].class_id].push_back(i);

  std::vector<bool> keep(ds.images.size(), true);
  for (auto& [id, idxs] : train_idx) {
    const auto it = session_of.find(id);
    if (it == session_of.end()) {
      for (std::size_t i : idxs) keep[i] = false;  // class not in any session
      continue;
    }
    if (it->second == 0) continue;  // base session keeps every sample
    if (static_cast<int>(idxs.size()) < spec.k_shot)
      throw DataError("make_splits: class " + std::to_string(id) + " has fewer than k_shot");
    detail::fisher_yates(idxs, rng);
    for (std::size_t i = spec.k_shot; i < idxs.size(); ++i) keep[idxs[i]] = false;
  }
  std::vector<ImageRecord> kept;
  kept.reserve(ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    if (keep[i]) kept.push_back(std::move(ds.images[i]));
  ds.images = std::move(kept);
  ds.k_shot = static_cast<std::uint32_t>(spec.k_shot);
  ds.seed = seed;
}

// ---------------------------------------------------------------------------
// FSEB v1 bundle IO
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kMagic[4] = {'F', 'S', 'E', 'B'};
constexpr std::uint32_t kVersion = 1;

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void pod(T v) {
    raw(&v, sizeof(T));
  }
  void finish_with_crc(const std::filesystem::path& path) {
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()), static_cast<uInt>(buf_.size())));
    pod(crc);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("bundle: cannot open for write: " + path.string());
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw DataError("bundle: write failed: " + path.string());
  }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("bundle: cannot open: " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (buf_.size() < sizeof(std::uint32_t)) throw DataError("bundle: truncated: " + path.string());
    const std::size_t body = buf_.size() - sizeof(std::uint32_t);
    std::uint32_t stored;
    std::memcpy(&stored, buf_.data() + body, sizeof(stored));
    const auto actual = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()), static_cast<uInt>(body)));
    if (stored != actual) throw DataError("bundle: checksum mismatch: " + path.string());
    end_ = body;
  }
  void raw(void* p, std::size_t n) {
    if (pos_ + n > end_) throw DataError("bundle: truncated record");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  bool exhausted() const { return pos_ == end_; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

}  // namespace detail

inline void write_bundle(const EmbeddingDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);

  nlohmann::json manifest;
  manifest["version"] = detail::kVersion;
  manifest["d_img"] = ds.d_img;
  manifest["d_txt"] = ds.d_txt;
  manifest["M"] = ds.M;
  manifest["class_names"] = ds.class_names;
  manifest["sessions"] = ds.sessions;
  manifest["k_shot"] = ds.k_shot;
  manifest["seed"] = ds.seed;
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw DataError("bundle: cannot write manifest");
  mf << manifest.dump(2) << "\n";

  detail::ByteWriter img;
  img.raw(detail::kMagic, 4);
  img.pod<std::uint32_t>(detail::kVersion);
  img.pod<std::uint32_t>(ds.d_img);
  img.pod<std::uint64_t>(ds.images.size());
  for (const auto& rec : ds.images) {
    img.pod<std::uint32_t>(rec.class_id);
    img.pod<std::uint8_t>(static_cast<std::uint8_t>(rec.split));
    img.raw(rec.vec.data(), sizeof(float) * ds.d_img);
  }
  img.finish_with_crc(dir / "images.bin");

  detail::ByteWriter txt;
  txt.raw(detail::kMagic, 4);
  txt.pod<std::uint32_t>(detail::kVersion);
  txt.pod<std::uint32_t>(ds.d_txt);
  txt.pod<std::uint32_t>(ds.M);
  txt.pod<std::uint64_t>(ds.text.size());
  for (const auto& [id, rec] : ds.text) {
    txt.pod<std::uint32_t>(id);
    for (const auto& t : rec.templates) txt.raw(t.data(), sizeof(float) * ds.d_txt);
  }
  txt.finish_with_crc(dir / "text.bin");
}

inline EmbeddingDataset load_bundle(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  std::ifstream mf(mpath);
  if (!mf) throw DataError("bundle: missing manifest: " + mpath.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bundle: malformed manifest: ") + e.what());
  }
  static const std::vector<std::string> kKeys = {"version", "d_img",  "d_txt", "M",
                                                 "class_names", "sessions", "k_shot", "seed"};
  for (const auto& key : kKeys)
    if (!manifest.contains(key)) throw DataError("bundle: manifest missing key: " + key);
  for (const auto& [key, value] : manifest.items()) {
    (void)value;
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end())
      throw DataError("bundle: unknown manifest key: " + key);
  }
  if (manifest["version"].get<std::uint32_t>() != detail::kVersion)
    throw DataError("bundle: unsupported manifest version");

  EmbeddingDataset ds;
  ds.d_img = manifest["d_img"].get<std::uint32_t>();
  ds.d_txt = manifest["d_txt"].get<std::uint32_t>();
  ds.M = manifest["M"].get<std::uint32_t>();
  ds.class_names = manifest["class_names"].get<std::vector<std::string>>();
  ds.sessions = manifest["sessions"].get<std::vector<std::vector<std::uint32_t>>>();
  ds.k_shot = manifest["k_shot"].get<std::uint32_t>();
  ds.seed = manifest["seed"].get<std::uint64_t>();

  detail::ByteReader img(dir / "images.bin");
  char magic[4];
  img.raw(magic, 4);
  if (std::memcmp(magic, detail::kMagic, 4) != 0) throw DataError("images.bin: bad magic");
  if (img.pod<std::uint32_t>() != detail::kVersion) throw DataError("images.bin: bad version");
  if (img.pod<std::uint32_t>() != ds.d_img)
    throw DataError("images.bin: dimension disagrees with manifest");
  const auto n_img = img.pod<std::uint64_t>();
  ds.images.resize(n_img);
  for (std::uint64_t i = 0; i < n_img; ++i) {
    auto& rec = ds.images[i];
    rec.class_id = img.pod<std::uint32_t>();
    const auto split = img.pod<std::uint8_t>();
    if (split > 1) throw DataError("images.bin: invalid split tag");
    rec.split = static_cast<Split>(split);
    rec.vec.resize(static_cast<int>(ds.d_img));
    img.raw(rec.vec.data(), sizeof(float) * ds.d_img);
  }
  if (!img.exhausted()) throw DataError("images.bin: trailing bytes");

  detail::ByteReader txt(dir / "text.bin");
  txt.raw(magic, 4);
  if (std::memcmp(magic, detail::kMagic, 4) != 0) throw DataError("text.bin: bad magic");
  if (txt.pod<std::uint32_t>() != detail::kVersion) throw DataError("text.bin: bad version");
  if (txt.pod<std::uint32_t>() != ds.d_txt)
    throw DataError("text.bin: dimension disagrees with manifest");
  if (txt.pod<std::uint32_t>() != ds.M) throw DataError("text.bin: M disagrees with manifest");
  const auto n_cls = txt.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_cls; ++i) {
    TextRecord rec;
    rec.class_id = txt.pod<std::uint32_t>();
    rec.templates.resize(ds.M);
    for (auto& t : rec.templates) {
      t.resize(static_cast<int>(ds.d_txt));
      txt.raw(t.data(), sizeof(float) * ds.d_txt);
    }
    if (!ds.text.emplace(rec.class_id, std::move(rec)).second)
      throw DataError("text.bin: duplicate class id");
  }
  if (!txt.exhausted()) throw DataError("text.bin: trailing bytes");

  ds.validate();
  return ds;
}

}  // namespace hyperfscil
