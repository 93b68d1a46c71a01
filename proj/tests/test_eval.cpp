#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "occseg/eval.hpp"
#include "toy_model.hpp"

using namespace occseg;

namespace {

BinaryMask random_mask(int w, int h, std::mt19937_64& rng) {
  BinaryMask m(w, h);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (rng() & 1u) ? 1 : 0;
  return m;
}

BinaryMask complement(const BinaryMask& m) {
  BinaryMask c(m.width(), m.height());
  for (std::size_t i = 0; i < m.size(); ++i) c[i] = 1 - m[i];
  return c;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.count = 4;
  c.canvas_w = c.canvas_h = 28;
  c.seed = 5;
  c.solver.mu = 0.03;
  c.solver.max_outer = 15;
  return c;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Drops the runtime columns (named in the header) from a CSV.
std::string without_runtime(const std::string& csv) {
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::string cur;
    for (char c : l) {
      if (c == ',') f.push_back(cur), cur.clear();
      else cur += c;
    }
    f.push_back(cur);
    return f;
  };
  const auto rows = lines(csv);
  const auto header = split(rows.at(0));
  std::string out;
  for (const auto& row : rows) {
    const auto f = split(row);
    for (std::size_t i = 0; i < f.size(); ++i)
      if (header[i].rfind("runtime", 0) != 0) out += f[i] + ',';
    out += '\n';
  }
  return out;
}

}  // namespace

TEST_CASE("threshold is strict") {
  CHECK(threshold_region(MembershipField(3, 2, 1.0), 0.5) == BinaryMask(3, 2, std::uint8_t{1}));
  CHECK(threshold_region(MembershipField(3, 2, 0.5), 0.5) == BinaryMask(3, 2));
  const MembershipField q(2, 2, std::vector<double>{0.2, 0.51, 0.5, 0.99});
  CHECK(threshold_region(q, 0.5) == BinaryMask(2, 2, std::vector<std::uint8_t>{0, 1, 0, 1}));
  CHECK(threshold_region(q, 0.1) == BinaryMask(2, 2, std::uint8_t{1}));
}

TEST_CASE("average pixel accuracy") {
  std::mt19937_64 rng(1);
  BinaryMask gt = random_mask(6, 6, rng);
  gt[0] = 1;
  gt[1] = 0;
  CHECK(average_pixel_accuracy(gt, gt) == 100.0);
  CHECK(average_pixel_accuracy(complement(gt), gt) == 0.0);
  const BinaryMask half(4, 2, std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0, 0, 0});
  CHECK(average_pixel_accuracy(BinaryMask(4, 2, std::uint8_t{1}), half) == 50.0);
  // 3 of 4 foreground and 1 of 4 background pixels right.
  const BinaryMask pred(4, 2, std::vector<std::uint8_t>{1, 1, 1, 0, 1, 1, 1, 0});
  CHECK(average_pixel_accuracy(pred, half) == doctest::Approx(50.0));
  CHECK(average_pixel_accuracy(pred, half, true) == doctest::Approx(50.0));
  const BinaryMask pred2(4, 2, std::vector<std::uint8_t>{1, 1, 1, 1, 1, 0, 0, 0});
  CHECK(average_pixel_accuracy(pred2, half) == doctest::Approx(87.5));
  CHECK(average_pixel_accuracy(pred2, half, true) == doctest::Approx(87.5));
  // One-class ground truth: the recall of that class.
  const BinaryMask none(4, 1);
  CHECK(average_pixel_accuracy(BinaryMask(4, 1, std::vector<std::uint8_t>{1, 0, 0, 0}), none) == 75.0);
  for (int t = 0; t < 20; ++t) {
    const BinaryMask p = random_mask(5, 5, rng), g = random_mask(5, 5, rng);
    CHECK(average_pixel_accuracy(complement(p), complement(g)) ==
          doctest::Approx(average_pixel_accuracy(p, g)));
  }
  CHECK_THROWS_AS(average_pixel_accuracy(BinaryMask(2, 2), BinaryMask(3, 2)), DataError);
}

TEST_CASE("intersection over union") {
  const BinaryMask a(2, 2, std::vector<std::uint8_t>{1, 0, 1, 0});
  const BinaryMask b(2, 2, std::vector<std::uint8_t>{0, 0, 1, 1});
  CHECK(iou(a, b) == doctest::Approx(100.0 / 3.0));
  CHECK(iou(a, a) == 100.0);
  CHECK(iou(a, complement(a)) == 0.0);
  CHECK(iou(BinaryMask(2, 2), BinaryMask(2, 2)) == 100.0);
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const BinaryMask p = random_mask(4, 4, rng), g = random_mask(4, 4, rng);
    const double v = iou(p, g);
    CHECK(v == iou(g, p));
    CHECK(v >= 0.0);
    CHECK(v <= 100.0);
    CHECK((v == 100.0) == (p == g));
  }
}

TEST_CASE("method names") {
  for (Method m : {Method::nosp, Method::single, Method::multi}) CHECK(parse_method(method_name(m)) == m);
  CHECK(method_name(Method::nosp) == "nosp");
  CHECK_THROWS_AS(parse_method("best"), DataError);
}

TEST_CASE("segment_image needs a model for shape-prior methods") {
  const Image u(8, 8, 0.5);
  CHECK_THROWS_AS(segment_image(u, Method::multi, 1, nullptr, nullptr, {}, {}), DataError);
}

TEST_CASE("prior-free experiment on noiseless scenes gets the front region exactly") {
  const ShapeDataset ds = toy::dataset();
  ExperimentConfig c = small_config();
  c.methods = {Method::nosp};
  c.sigma = 0.0;
  c.count = 6;
  // Noiseless data needs little smoothing; a large TV weight rounds the
  // front object's corners where it meets the back object.
  c.solver.nu = 0.01;
  const ExperimentReport r = run_experiment(ds, nullptr, nullptr, c);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.rows[0].region == 1);
  CHECK(r.rows[0].ap_mean == 100.0);
  CHECK(r.rows[0].iou_mean == 100.0);
  CHECK(r.rows[0].n_instances == 6);
  CHECK(r.failures == std::vector<int>{0});
}

TEST_CASE("experiment report") {
  const toy::Model& m = toy::model();
  const ExperimentConfig c = small_config();
  const ExperimentReport r = run_experiment(m.data, &m.params, &m.arch, c);
  REQUIRE(r.rows.size() == 6);
  REQUIRE(r.instances.size() == 12);

  SUBCASE("means and stds agree with the instances") {
    for (const auto& row : r.rows) {
      std::vector<double> ap, io;
      for (const auto& inst : r.instances)
        if (inst.method == row.method && !inst.failed) {
          ap.push_back(inst.scores[static_cast<std::size_t>(row.region - 1)].ap);
          io.push_back(inst.scores[static_cast<std::size_t>(row.region - 1)].iou);
        }
      auto mean = [](const std::vector<double>& x) {
        double s = 0.0;
        for (double v : x) s += v;
        return s / static_cast<double>(x.size());
      };
      const double am = mean(ap);
      double var = 0.0;
      for (double v : ap) var += (v - am) * (v - am);
      CHECK(row.n_instances == static_cast<int>(ap.size()));
      CHECK(row.ap_mean == doctest::Approx(am).epsilon(1e-12));
      CHECK(row.ap_std == doctest::Approx(std::sqrt(var / static_cast<double>(ap.size()))).epsilon(1e-12));
      CHECK(row.iou_mean == doctest::Approx(mean(io)).epsilon(1e-12));
      CHECK(row.ap_std >= 0.0);
      CHECK(row.runtime_std_s >= 0.0);
    }
  }
  SUBCASE("csv layout and determinism") {
    std::ostringstream s1, i1;
    write_summary_csv(s1, r);
    write_instances_csv(i1, r);
    const auto rows = lines(s1.str());
    CHECK(rows[0] == "method,region,ap_mean,ap_std,iou_mean,iou_std,runtime_mean_s,runtime_std_s,n_instances");
    CHECK(rows.size() == 7);
    CHECK(lines(i1.str()).size() == 1 + 12 * 2);

    const ExperimentReport again = run_experiment(m.data, &m.params, &m.arch, c);
    std::ostringstream s2, i2;
    write_summary_csv(s2, again);
    write_instances_csv(i2, again);
    CHECK(without_runtime(s1.str()) == without_runtime(s2.str()));
    CHECK(without_runtime(i1.str()) == without_runtime(i2.str()));
  }
  SUBCASE("metadata") {
    const nlohmann::json j = experiment_metadata(c, r);
    CHECK(j.dump().find("\"mu\"") != std::string::npos);
    CHECK(j.dump().find("\"seed\"") != std::string::npos);
  }
}

TEST_CASE("scene seeds differ per instance") {
  CHECK(scene_seed(3, 0) != scene_seed(3, 1));
  CHECK(scene_seed(3, 0) != scene_seed(4, 0));
  CHECK(scene_seed(3, 7) == scene_seed(3, 7));
}

TEST_CASE("bad experiment configs") {
  ExperimentConfig c = small_config();
  c.methods.clear();
  CHECK_THROWS_AS(c.validate(), DataError);
  c = small_config();
  c.n_objects = 4;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = small_config();
  c.count = 0;
  CHECK_THROWS_AS(c.validate(), DataError);
}

TEST_CASE("occlusion-aware prior beats the single-region prior on most toy scenes") {
  const toy::Model& m = toy::model();
  ExperimentConfig c;
  c.methods = {Method::single, Method::multi};
  c.count = 50;
  c.canvas_w = c.canvas_h = 28;
  c.seed = 3;
  c.solver.mu = 0.03;
  const ExperimentReport r = run_experiment(m.data, &m.params, &m.arch, c);
  int wins = 0, ties = 0, losses = 0;
  for (int k = 0; k < c.count; ++k) {
    const auto& single = r.instances[static_cast<std::size_t>(2 * k)];
    const auto& multi = r.instances[static_cast<std::size_t>(2 * k + 1)];
    REQUIRE(!single.failed);
    REQUIRE(!multi.failed);
    const double a = multi.scores[1].iou, b = single.scores[1].iou;
    (a > b ? wins : a == b ? ties : losses)++;
  }
  MESSAGE("region 2: multi wins " << wins << ", ties " << ties << ", loses " << losses);
  // Scenes where both reach 100 cannot be won, so ties count as not worse.
  CHECK(wins + ties >= 35);
  CHECK(wins >= 0.7 * (wins + losses));
}
