#include "testing.hpp"

#include <cmath>

#include "msdepth/errors.hpp"
#include "msdepth/metrics.hpp"
#include "oracles.hpp"

using namespace msdepth;

namespace {

torch::Tensor all_valid(const torch::Tensor& t) { return torch::ones_like(t, torch::kBool); }

void check_against_oracle(const MetricReport& r, const oracle::Metrics& m, double tol) {
  CHECK(std::abs(r.abs_rel - m.abs_rel) <= tol);
  CHECK(std::abs(r.sq_rel - m.sq_rel) <= tol);
  CHECK(std::abs(r.rmse - m.rmse) <= tol * std::max(1.0, m.rmse));
  CHECK(std::abs(r.rmse_log - m.rmse_log) <= tol);
  CHECK(std::abs(r.d1 - m.d1) <= tol);
  CHECK(std::abs(r.d2 - m.d2) <= tol);
  CHECK(std::abs(r.d3 - m.d3) <= tol);
  CHECK(r.n_pixels == m.n);
}

}  // namespace

TEST_CASE("golden metric examples") {
  SUBCASE("perfect prediction") {
    const torch::Tensor gt = torch::tensor({1.5, 3.0, 10.0, 42.0}, torch::kDouble);
    const MetricReport r = compute_metrics(gt, gt, all_valid(gt));
    CHECK(r.abs_rel == 0.0);
    CHECK(r.sq_rel == 0.0);
    CHECK(r.rmse == 0.0);
    CHECK(r.rmse_log == 0.0);
    CHECK(r.d1 == 1.0);
    CHECK(r.d2 == 1.0);
    CHECK(r.d3 == 1.0);
    CHECK(r.n_pixels == 4);
  }
  SUBCASE("uniform 20 percent over") {
    const torch::Tensor gt = torch::tensor({2.0, 4.0, 8.0}, torch::kDouble);
    const MetricReport r = compute_metrics(1.2 * gt, gt, all_valid(gt));
    CHECK(std::abs(r.abs_rel - 0.2) <= 1e-12);
    CHECK(r.d1 == 1.0);
    CHECK(std::abs(r.rmse_log - std::log(1.2)) <= 1e-12);
  }
  SUBCASE("two pixels at half depth") {
    const torch::Tensor pred = torch::tensor({1.0, 2.0}, torch::kDouble);
    const torch::Tensor gt = torch::tensor({2.0, 4.0}, torch::kDouble);
    const MetricReport r = compute_metrics(pred, gt, all_valid(gt));
    CHECK(std::abs(r.abs_rel - 0.5) <= 1e-12);
    CHECK(std::abs(r.rmse - std::sqrt(2.5)) <= 1e-12);
    CHECK(r.d1 == 0.0);
  }
}

TEST_CASE("metrics agree with a loop oracle") {
  oracle::Gen gen(31);
  for (int trial = 0; trial < 50; ++trial) {
    const torch::Tensor gt = gen.tensor({1, 6, 9}, 0.5, 90);
    const torch::Tensor pred = gen.tensor({1, 6, 9}, 0.6, 100);
    const torch::Tensor valid = gen.mask({6, 9}, 0.8);
    valid[0][0] = true;
    gt[0][0][0] = 5.0;
    const MetricReport r = compute_metrics(pred, gt, valid);
    const auto v = oracle::to_mask(valid);
    auto p = oracle::to_vector(pred), g = oracle::to_vector(gt);
    std::vector<double> pk, gk;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i]) {
        pk.push_back(p[i]);
        gk.push_back(g[i]);
      }
    }
    check_against_oracle(r, oracle::metrics(pk, gk, 1.0, 80.0), 1e-9);
  }
}

TEST_CASE("metric sanity properties") {
  oracle::Gen gen(32);
  for (int trial = 0; trial < 50; ++trial) {
    const torch::Tensor gt = gen.tensor({40}, 1, 80);
    const double c = gen.uniform(0.3, 3.0);
    const MetricReport scaled = compute_metrics(c * gt, gt, all_valid(gt));
    CHECK(std::abs(scaled.abs_rel - std::abs(c - 1)) <= 1e-9);
    CHECK(std::abs(scaled.rmse_log - std::abs(std::log(c))) <= 1e-9);

    const MetricReport r = compute_metrics(gen.tensor({40}, 0.5, 100), gt, all_valid(gt));
    CHECK(r.d1 <= r.d2);
    CHECK(r.d2 <= r.d3);
    CHECK(r.d1 >= 0.0);
    CHECK(r.d3 <= 1.0);
    CHECK(r.abs_rel >= 0.0);
    CHECK(r.rmse >= 0.0);
  }
}

TEST_CASE("pixels outside the depth range or mask are ignored") {
  const torch::Tensor gt = torch::tensor({0.5, 2.0, 85.0, 4.0, 10.0}, torch::kDouble);
  const torch::Tensor pred = torch::tensor({100.0, 2.0, 1.0, 4.0, 99.0}, torch::kDouble);
  const torch::Tensor valid = torch::tensor({true, true, true, true, false});
  const MetricReport r = compute_metrics(pred, gt, valid);
  CHECK(r.n_pixels == 2);
  CHECK(r.rmse == 0.0);

  EvalConfig cap;
  cap.depth_cap = 3.0;
  CHECK(compute_metrics(pred, gt, all_valid(gt), cap).n_pixels == 1);

  CHECK_THROWS_AS(compute_metrics(pred, gt, torch::zeros({5}, torch::kBool)), DomainError);
  CHECK_THROWS_AS(compute_metrics(pred, torch::full({5}, 0.1, torch::kDouble), all_valid(gt)), DomainError);
  CHECK_THROWS_AS(compute_metrics(pred, gt.narrow(0, 0, 4), valid), InterfaceError);
}

TEST_CASE("accumulator averages per image") {
  MetricAccumulator acc;
  CHECK(acc.empty());
  MetricReport a;
  a.abs_rel = 0.2;
  a.rmse = 2.0;
  a.d1 = 1.0;
  a.n_pixels = 10;
  MetricReport b;
  b.abs_rel = 0.4;
  b.rmse = 4.0;
  b.d1 = 0.0;
  b.n_pixels = 1000;
  acc.add(a);
  acc.add(b);
  const MetricReport m = acc.mean("rgb", "day");
  CHECK(m.modality == "rgb");
  CHECK(m.condition == "day");
  CHECK(std::abs(m.abs_rel - 0.3) <= 1e-12);
  CHECK(std::abs(m.rmse - 3.0) <= 1e-12);
  CHECK(std::abs(m.d1 - 0.5) <= 1e-12);
  CHECK(m.n_pixels == 1010);
  CHECK(acc.count() == 2);
}

TEST_CASE("model evaluation groups rows") {
  torch::manual_seed(3);
  DepthNet net(BackboneConfig{});
  EvalConfig cfg;
  cfg.batch_size = 3;

  SUBCASE("single condition: condition and Avg rows coincide, empty buckets warn") {
    const SampleSource data = make_dataset(4, 5, {1.0, 0.0, 0.0}, Split::Test);
    std::vector<std::string> warnings;
    const std::vector<MetricReport> rows =
        evaluate_model(net, nullptr, data, EvalMode::PerSpectrum, cfg, [&](const std::string& w) { warnings.push_back(w); });
    REQUIRE(rows.size() == 6);
    CHECK(warnings.size() == 6);
    for (std::size_t i = 0; i < rows.size(); i += 2) {
      CHECK(rows[i].condition == "day");
      CHECK(rows[i + 1].condition == "Avg");
      CHECK(rows[i].modality == rows[i + 1].modality);
      MetricReport avg = rows[i + 1];
      avg.condition = "day";
      CHECK(avg == rows[i]);
    }
    CHECK(rows[0].modality == "rgb");
    CHECK(rows[2].modality == "nir");
    CHECK(rows[4].modality == "thr");
  }
  SUBCASE("every condition present") {
    const SampleSource data = make_dataset(6, 5, {1.0 / 3, 1.0 / 3, 1.0 / 3}, Split::Test);
    std::vector<std::string> warnings;
    const std::vector<MetricReport> rows =
        evaluate_model(net, nullptr, data, EvalMode::PerSpectrum, cfg, [&](const std::string& w) { warnings.push_back(w); });
    CHECK(rows.size() == 12);
    CHECK(warnings.empty());
    // The Avg row weighs every image equally, so with equal buckets it is the mean of the condition rows.
    for (std::size_t m = 0; m < 3; ++m) {
      const double mean = (rows[4 * m].rmse + rows[4 * m + 1].rmse + rows[4 * m + 2].rmse) / 3;
      CHECK(std::abs(rows[4 * m + 3].rmse - mean) <= 1e-9 * mean);
    }
    const SampleSource rain = data.filtered(std::array{Condition::Rain});
    const std::vector<MetricReport> rain_rows = evaluate_model(net, nullptr, rain, EvalMode::PerSpectrum, cfg);
    for (const MetricReport& r : rain_rows) CHECK((r.condition == "rain" || r.condition == "Avg"));
  }
  SUBCASE("fused mode adds fused rows and needs a fusion block") {
    const SampleSource data = make_dataset(2, 5, {1.0, 0.0, 0.0}, Split::Test);
    CHECK_THROWS_AS(evaluate_model(net, nullptr, data, EvalMode::Fused, cfg), InterfaceError);
    FusionModule fusion(FusionBlockConfig{});
    const std::vector<MetricReport> rows = evaluate_model(net, &fusion, data, EvalMode::Fused, cfg);
    REQUIRE(rows.size() == 8);
    CHECK(rows[6].modality == "fused");
    CHECK(rows[7].condition == "Avg");
  }
}

TEST_CASE("eval mode names") {
  CHECK((parse_eval_mode("per-spectrum") == EvalMode::PerSpectrum));
  CHECK((parse_eval_mode("fused") == EvalMode::Fused));
  CHECK_THROWS_AS(parse_eval_mode("both"), ConfigError);
}
