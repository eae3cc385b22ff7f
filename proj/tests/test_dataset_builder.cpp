#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "cola/dataset_builder.hpp"
#include "cola/error.hpp"
#include "support.hpp"

using namespace cola;
namespace fs = std::filesystem;

namespace {

struct Env {
  LabelRegistry reg = load_label_registry(test::data_dir() / "labelsets.yaml");
  SynonymTable syn = load_synonyms(test::data_dir() / "synonyms.yaml");
  fs::path tax = test::data_dir() / "taxonomies";

  LabelingPlan plan(Strategy s, const std::vector<std::string>& sources) const {
    return make_plan(s, reg, syn, sources, tax);
  }
};

const Env& env() {
  static const Env e;
  return e;
}

// Labels drawn from a few SemanticKITTI ids, some points non-finite.
std::vector<std::vector<test::KittiPoint>> random_frames(std::mt19937_64& rng, int frames, int points,
                                                         bool with_nan = true) {
  const std::uint32_t ids[] = {0, 1, 10, 11, 30, 40, 44, 48, 50, 70, 72, 80, 81, 252};
  std::uniform_real_distribution<float> coord(-40.0f, 40.0f);
  std::vector<std::vector<test::KittiPoint>> out(frames);
  for (auto& f : out) {
    for (int i = 0; i < points; ++i) {
      test::KittiPoint p{coord(rng), coord(rng), coord(rng) / 10.0f, coord(rng) / 40.0f,
                         ids[rng() % std::size(ids)] | (static_cast<std::uint32_t>(rng() % 5) << 16)};
      if (with_nan && rng() % 50 == 0) p.y = std::numeric_limits<float>::quiet_NaN();
      f.push_back(p);
    }
  }
  return out;
}

std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = test::read_bytes(e.path());
  }
  return out;
}

// Reference SplitMix64, stepping state as in the published algorithm.
struct SplitMix64 {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
};

std::size_t expected_size(double f, std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 0.5)));
}

}  // namespace

TEST_CASE("two datasets of three frames") {
  test::TempDir tmp;
  std::mt19937_64 rng(1);
  const auto a = test::write_kitti_dataset(tmp / "in", "alpha", random_frames(rng, 3, 40));
  const auto b = test::write_kitti_dataset(tmp / "in", "beta", random_frames(rng, 3, 40));
  std::vector<DatasetManifest> ms{load_manifest(a, env().reg), load_manifest(b, env().reg)};
  BuildOptions opt;
  opt.jobs = 2;
  const BuildReport r = build_multi_source(ms, env().plan(Strategy::cola7, {"semantickitti"}), opt, tmp / "out");
  REQUIRE(r.datasets.size() == 2);
  CHECK(r.datasets[0].name == "alpha");
  CHECK(r.datasets[0].frames == 3);
  CHECK(r.datasets[1].frames == 3);

  const DatasetManifest out = load_manifest(tmp / "out" / kBuildManifestName, env().reg, true);
  CHECK(out.frames.size() == 6);
  CHECK(out.format == FrameFormat::cola_frame);
  CHECK(out.labelset == "cola7");
  std::map<std::string, int> per_source;
  std::set<std::string> origins;
  for (const auto& f : out.frames) {
    ++per_source[f.source_dataset];
    CHECK(origins.insert(f.source_dataset + ":" + f.source_frame).second);
  }
  CHECK(per_source == std::map<std::string, int>{{"alpha", 3}, {"beta", 3}});
  REQUIRE(out.sources.size() == 2);
  CHECK(out.sources[0].frames == 3);
  CHECK_FALSE(fs::exists(tmp / "out" / kCheckpointName));
}

TEST_CASE("car, car, road becomes Vehicle 2 and Driveable Ground 1") {
  test::TempDir tmp;
  const auto m = test::write_kitti_dataset(tmp / "in", "tiny", {{{1, 2, 0, 0.1f, 10}, {2, 1, 0, 0.2f, 10}, {3, 3, 0, 0.3f, 40}}});
  std::vector<DatasetManifest> ms{load_manifest(m, env().reg)};
  const LabelingPlan plan = env().plan(Strategy::cola7, {"semantickitti"});
  const BuildReport r = build_multi_source(ms, plan, {}, tmp / "out");
  const LabelSet& c7 = plan.mapping_for("semantickitti").target();
  const ClassHistogram& h = r.classes.at("cola7");
  std::map<std::string, std::uint64_t> named;
  for (const auto& [id, n] : h.points) {
    if (n) named[c7.label(id).name] = n;
  }
  CHECK(named == std::map<std::string, std::uint64_t>{{"Vehicle", 2}, {"Driveable Ground", 1}});
  CHECK(h.total_points() == r.total_points);

  const DatasetManifest out = load_manifest(tmp / "out" / kBuildManifestName, env().reg);
  const ColaFrame f = load_frame(out, out.frames[0]);
  CHECK(f.labels->values == std::vector<LabelId>{*c7.find("Vehicle"), *c7.find("Vehicle"), *c7.find("Driveable Ground")});
  CHECK(f.cloud.reflectivity);
}

TEST_CASE("conservation and channel options") {
  test::TempDir tmp;
  std::mt19937_64 rng(2);
  const auto frames = random_frames(rng, 4, 300);
  std::uint64_t finite = 0, nonfinite = 0;
  for (const auto& f : frames) {
    for (const auto& p : f) (std::isfinite(p.y) ? finite : nonfinite) += 1;
  }
  REQUIRE(nonfinite > 0);
  const auto m = test::write_kitti_dataset(tmp / "in", "d", frames);
  std::vector<DatasetManifest> ms{load_manifest(m, env().reg)};
  BuildOptions opt;
  opt.channels.reflectivity = false;
  const BuildReport r = build_multi_source(ms, env().plan(Strategy::cola5, {"semantickitti"}), opt, tmp / "out");
  CHECK(r.total_points == finite);
  CHECK(r.dropped_points == nonfinite);
  CHECK(r.classes.at("cola5").total_points() == finite);

  const DatasetManifest out = load_manifest(tmp / "out" / kBuildManifestName, env().reg);
  std::uint64_t dropped = 0;
  for (const auto& f : out.frames) {
    dropped += f.dropped_points;
    CHECK_FALSE(load_frame(out, f).cloud.reflectivity);
  }
  CHECK(dropped == nonfinite);
}

TEST_CASE("rebuilds are byte-identical for any worker count") {
  test::TempDir tmp;
  std::mt19937_64 rng(3);
  const auto a = test::write_kitti_dataset(tmp / "in", "alpha", random_frames(rng, 5, 200));
  const auto b = test::write_kitti_dataset(tmp / "in", "beta", random_frames(rng, 4, 200));
  std::vector<DatasetManifest> ms{load_manifest(a, env().reg), load_manifest(b, env().reg)};
  for (auto s : {Strategy::cola9, Strategy::union_labels, Strategy::multihead}) {
    CAPTURE(to_string(s));
    const LabelingPlan plan = env().plan(s, {"semantickitti"});
    BuildOptions one;
    one.jobs = 1;
    BuildOptions three;
    three.jobs = 3;
    const BuildReport r1 = build_multi_source(ms, plan, one, tmp / "o1");
    const BuildReport r2 = build_multi_source(ms, plan, three, tmp / "o2");
    CHECK(snapshot(tmp / "o1") == snapshot(tmp / "o2"));
    CHECK(r1.to_json() == r2.to_json());
    fs::remove_all(tmp / "o1");
    fs::remove_all(tmp / "o2");
  }
}

TEST_CASE("multihead builds keep per-frame label sets") {
  test::TempDir tmp;
  std::mt19937_64 rng(4);
  const auto a = test::write_kitti_dataset(tmp / "in", "sk", random_frames(rng, 2, 50));
  const auto b = test::write_kitti_dataset(tmp / "in", "k360", random_frames(rng, 2, 50, false), "kitti360");
  // kitti360 ids differ; rewrite the labels with valid ones.
  std::vector<DatasetManifest> ms{load_manifest(a, env().reg)};
  {
    DatasetManifest k = load_manifest(b, env().reg);
    for (const auto& f : k.frames) {
      const auto cloud = read_kitti_bin(k.scan_path(f));
      std::vector<std::uint8_t> bytes;
      for (std::size_t i = 0; i < cloud.size(); ++i) test::put(bytes, static_cast<std::uint32_t>(7 + i % 5));
      test::write_bytes(k.label_path(f), bytes);
    }
    ms.push_back(k);
  }
  const LabelingPlan plan = env().plan(Strategy::multihead, {"semantickitti", "kitti360"});
  build_multi_source(ms, plan, {}, tmp / "out");
  const DatasetManifest out = load_manifest(tmp / "out" / kBuildManifestName, env().reg);
  std::set<std::string> sets;
  for (const auto& f : out.frames) {
    sets.insert(f.labelset);
    const ColaFrame frame = load_frame(out, f);
    CHECK(frame.labels->labelset == f.labelset);
  }
  CHECK(sets == std::set<std::string>{"kitti360_train", "semantickitti_train"});
  CHECK(out.embedded_labelsets.size() == 2);
}

TEST_CASE("an I/O failure leaves a checkpoint that resume picks up") {
  test::TempDir tmp;
  std::mt19937_64 rng(5);
  const auto m = test::write_kitti_dataset(tmp / "in", "d", random_frames(rng, 6, 100));
  std::vector<DatasetManifest> ms{load_manifest(m, env().reg)};
  const LabelingPlan plan = env().plan(Strategy::cola7, {"semantickitti"});
  BuildOptions opt;
  opt.jobs = 1;
  build_multi_source(ms, plan, opt, tmp / "clean");

  const fs::path victim = ms[0].label_path(ms[0].frames[4]);
  fs::rename(victim, tmp / "moved.label");
  CHECK_THROWS_AS(build_multi_source(ms, plan, opt, tmp / "out"), IoError);
  REQUIRE(fs::exists(tmp / "out" / kCheckpointName));
  CHECK_FALSE(fs::exists(tmp / "out" / kBuildManifestName));

  fs::rename(tmp / "moved.label", victim);
  opt.resume = true;
  const BuildReport r = build_multi_source(ms, plan, opt, tmp / "out");
  CHECK(r.resumed_frames == 4);
  CHECK_FALSE(fs::exists(tmp / "out" / kCheckpointName));
  auto clean = snapshot(tmp / "clean");
  auto resumed = snapshot(tmp / "out");
  CHECK(clean == resumed);
}

TEST_CASE("build preconditions") {
  test::TempDir tmp;
  std::mt19937_64 rng(6);
  const auto a = test::write_kitti_dataset(tmp / "in", "a", random_frames(rng, 1, 10));
  std::vector<DatasetManifest> ms{load_manifest(a, env().reg), load_manifest(a, env().reg)};
  const LabelingPlan plan = env().plan(Strategy::cola7, {"semantickitti"});
  CHECK_THROWS_AS(build_multi_source(ms, plan, {}, tmp / "o"), ValidationError);
  ms.pop_back();
  const LabelingPlan other = env().plan(Strategy::cola7, {"nuscenes"});
  LabelingPlan partial{"p", {{"nuscenes", other.mapping_for("nuscenes")}}};
  CHECK_THROWS_AS(build_multi_source(ms, partial, {}, tmp / "o"), ValidationError);
  CHECK_THROWS_AS(build_multi_source({}, plan, {}, tmp / "o"), ValidationError);
}

TEST_CASE("class statistics") {
  test::TempDir tmp;
  std::mt19937_64 rng(7);
  const auto frames = random_frames(rng, 3, 250);
  const auto path = test::write_kitti_dataset(tmp / "in", "d", frames);
  const DatasetManifest m = load_manifest(path, env().reg);

  // Direct count over the raw records.
  std::map<LabelId, std::uint64_t> points, present;
  for (const auto& f : frames) {
    std::set<LabelId> seen;
    for (const auto& p : f) {
      if (!std::isfinite(p.y)) continue;
      const auto id = static_cast<LabelId>(p.label & 0xFFFF);
      ++points[id];
      seen.insert(id);
    }
    for (auto id : seen) ++present[id];
  }

  const ClassStats fine = compute_class_stats(m, env().reg, nullptr, 2);
  CHECK(fine.frames_read == 3);
  CHECK(fine.unreadable.empty());
  const ClassHistogram& h = fine.histograms.at("semantickitti");
  for (const auto& [id, n] : h.points) {
    CHECK(n == points[id]);
    CHECK(h.frames.at(id) == present[id]);
  }
  CHECK(h.points.size() == env().reg.get("semantickitti")->size());

  SUBCASE("coarse counts equal fine counts pushed through the mapping") {
    const LabelingPlan plan = env().plan(Strategy::cola7, {"semantickitti"});
    const MappingTable& map = plan.mapping_for("semantickitti");
    const ClassStats coarse = compute_class_stats(m, env().reg, &plan, 1);
    std::map<LabelId, std::uint64_t> pushed;
    for (const auto& [id, n] : h.points) pushed[map.apply(id)] += n;
    for (const auto& [id, n] : coarse.histograms.at("cola7").points) CHECK(n == pushed[id]);
  }

  SUBCASE("unreadable frames are recorded and skipped") {
    fs::remove(m.scan_path(m.frames[1]));
    const ClassStats s = compute_class_stats(m, env().reg);
    CHECK(s.frames_read == 2);
    REQUIRE(s.unreadable.size() == 1);
    CHECK(s.unreadable[0].find("000001") != std::string::npos);
  }

  SUBCASE("empty dataset") {
    DatasetManifest empty = m;
    empty.frames.clear();
    const ClassStats s = compute_class_stats(empty, env().reg);
    const ClassHistogram& e = s.histograms.at("semantickitti");
    CHECK(e.total_points() == 0);
    CHECK(e.points.size() == env().reg.get("semantickitti")->size());
  }
}

TEST_CASE("splitmix64 outputs") {
  SplitMix64 ref{1234567};
  const std::uint64_t published[] = {6457827717110365317ull, 3203168211198807973ull, 9817491932198370423ull,
                                     4593380528125082431ull, 16408922859458223821ull};
  for (std::uint64_t i = 0; i < 5; ++i) {
    CHECK(splitmix64_at(1234567, i) == published[i]);
    CHECK(ref.next() == published[i]);
  }
  SplitMix64 other{42};
  for (std::uint64_t i = 0; i < 1000; ++i) CHECK(splitmix64_at(42, i) == other.next());
}

TEST_CASE("subset examples") {
  const SubsetManifest all = sample_subset(17, 1.0, 99);
  CHECK(all.selected.size() == 17);
  CHECK(all.selected.front() == 0);
  CHECK(all.selected.back() == 16);

  const SubsetManifest half = sample_subset(10, 0.5, 42);
  CHECK(half.selected.size() == 5);
  CHECK(sample_subset(10, 0.5, 42).selected == half.selected);

  const SubsetManifest s1 = sample_subset(3000, 0.001, 7);
  const SubsetManifest s10 = sample_subset(3000, 0.01, 7);
  CHECK(s1.selected.size() == 3);
  CHECK(s10.selected.size() == 30);
  CHECK(std::includes(s10.selected.begin(), s10.selected.end(), s1.selected.begin(), s1.selected.end()));

  CHECK(sample_subset(3000, 0.0001, 7).selected.size() == 1);
  CHECK(subset_size(5, 0.5) == 3);
  CHECK(subset_size(3, 0.5) == 2);
  CHECK_THROWS_AS(sample_subset(10, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(sample_subset(10, 1.5, 1), ValidationError);
  CHECK_THROWS_AS(sample_subset(10, -0.1, 1), ValidationError);
  CHECK_THROWS_AS(sample_subset(10, std::nan(""), 1), ValidationError);
  CHECK_THROWS_AS(sample_subset(0, 0.5, 1), ValidationError);
}

TEST_CASE("subset properties over random sizes, fractions and seeds") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 500;
    const std::uint64_t seed = rng();
    double f1 = frac(rng), f2 = frac(rng);
    if (f1 == 0.0 || f2 == 0.0) continue;
    if (f1 > f2) std::swap(f1, f2);
    const auto a = sample_subset(n, f1, seed);
    const auto b = sample_subset(n, f2, seed);
    CHECK(a.selected.size() == expected_size(f1, n));
    CHECK(b.selected.size() == expected_size(f2, n));
    CHECK(std::is_sorted(a.selected.begin(), a.selected.end()));
    CHECK(std::adjacent_find(a.selected.begin(), a.selected.end()) == a.selected.end());
    CHECK(a.selected.back() < n);
    CHECK(std::includes(b.selected.begin(), b.selected.end(), a.selected.begin(), a.selected.end()));
  }
}

TEST_CASE("subset manifests on disk") {
  test::TempDir tmp;
  std::mt19937_64 rng(9);
  const auto path = test::write_kitti_dataset(tmp / "in", "d", random_frames(rng, 10, 5));
  const DatasetManifest m = load_manifest(path, env().reg);
  const SubsetManifest s = sample_subset(m, 0.3, 5);
  CHECK(s.parent == "d");
  write_subset_manifest(s, m, tmp / "subset.json");
  const SubsetManifest back = read_subset_manifest(tmp / "subset.json");
  CHECK(back.selected == s.selected);
  CHECK(back.seed == 5);
  CHECK(back.fraction == 0.3);
  CHECK(back.parent_frames == 10);
  const DatasetManifest sub = apply_subset(m, back);
  REQUIRE(sub.frames.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(sub.frames[i] == m.frames[s.selected[i]]);

  test::write_text(tmp / "bad.json", R"({"parent": "d", "fraction": 0.3, "seed": 5, "parent_frames": 10, "selected": [3, 2]})");
  CHECK_THROWS_AS(read_subset_manifest(tmp / "bad.json"), ValidationError);
  SubsetManifest wrong = s;
  wrong.parent_frames = 11;
  CHECK_THROWS_AS(apply_subset(m, wrong), ValidationError);
}

TEST_CASE("report merge is associative and commutative") {
  std::mt19937_64 rng(10);
  auto random_report = [&] {
    BuildReport r;
    r.datasets.push_back({"a", rng() % 10, rng() % 1000, rng() % 5});
    ClassHistogram h;
    h.labelset = "cola7";
    for (LabelId id = 0; id < 8; ++id) {
      h.points[id] = rng() % 100;
      h.frames[id] = rng() % 3;
    }
    r.classes["cola7"] = h;
    r.total_points = h.total_points();
    return r;
  };
  const BuildReport a = random_report(), b = random_report(), c = random_report();
  BuildReport ab = a;
  ab.merge(b);
  BuildReport ba = b;
  ba.merge(a);
  CHECK(ab.to_json() == ba.to_json());
  BuildReport ab_c = ab;
  ab_c.merge(c);
  BuildReport bc = b;
  bc.merge(c);
  BuildReport a_bc = a;
  a_bc.merge(bc);
  CHECK(ab_c.to_json() == a_bc.to_json());
}
