#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "borelog/baselines.hpp"

using namespace borelog;

namespace {

// Best agreement over all relabelings, by brute force.
double best_agreement(const std::vector<int>& a, const std::vector<int>& b) {
  std::array<int, 4> perm{0, 1, 2, 3};
  double best = 0.0;
  do {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < a.size(); ++i) hit += perm[static_cast<std::size_t>(a[i])] == b[i];
    best = std::max(best, static_cast<double>(hit) / static_cast<double>(a.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Field banded(std::size_t h, std::size_t w, double noise, std::uint64_t seed, LabelMap* truth = nullptr) {
  const double level[4] = {-30, -20, -10, 0};
  Field f(h, w);
  if (truth) *truth = LabelMap(h, w);
  Rng rng(seed);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t k = (r * 4 / h);
      f(r, c) = level[k] + noise * rng.normal();
      if (truth) (*truth)(r, c) = static_cast<int>(k);
    }
  return f;
}

std::size_t isolated_pixels(const LabelMap& m) {
  std::size_t n = 0;
  for (std::size_t r = 1; r + 1 < m.rows; ++r)
    for (std::size_t c = 1; c + 1 < m.cols; ++c) {
      bool alone = true;
      for (int dr = -1; dr <= 1 && alone; ++dr)
        for (int dc = -1; dc <= 1; ++dc)
          if ((dr || dc) && m(r + dr, c + dc) == m(r, c)) {
            alone = false;
            break;
          }
      n += alone;
    }
  return n;
}

}  // namespace

TEST(ThresholdBaselines, RawOtsuRecoversBands) {
  LabelMap truth;
  IntervalBundle b;
  b.image_db = banded(64, 16, 0.5, 1, &truth);
  const auto seg = raw_otsu_baseline(b);
  EXPECT_EQ(seg.labels, truth);
  EXPECT_DOUBLE_EQ(best_agreement(seg.labels.data, seg.labels.data), 1.0);
  b.image_db = Field(8, 8, -5.0);
  const auto flat = raw_otsu_baseline(b);
  EXPECT_TRUE(flat.thresholds.degenerate);
  EXPECT_EQ(flat.labels, LabelMap(8, 8, 0));
}

TEST(ThresholdBaselines, AeOtsuMatchesRawWhenReconstructionIsExact) {
  IntervalBundle b;
  b.image_db = banded(64, 16, 2.0, 2);
  DenoiseOutput d;
  d.image_db_hat = b.image_db;
  EXPECT_EQ(ae_otsu_baseline(d).labels, raw_otsu_baseline(b).labels);
}

TEST(ThresholdBaselines, SmoothingReducesIsolatedPixels) {
  IntervalBundle b;
  b.image_db = banded(96, 64, 1.0, 3);
  Rng rng(4);
  for (double& v : b.image_db.data)
    if (rng.uniform() < 0.05) v = rng.uniform(-35, 5);
  // stand-in for a denoiser: a 3x3 box filter of the raw image
  DenoiseOutput d;
  d.image_db_hat = b.image_db;
  for (std::size_t r = 1; r + 1 < 96; ++r)
    for (std::size_t c = 1; c + 1 < 64; ++c) {
      double s = 0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) s += b.image_db(r + dr, c + dc);
      d.image_db_hat(r, c) = s / 9;
    }
  EXPECT_LT(isolated_pixels(ae_otsu_baseline(d).labels), isolated_pixels(raw_otsu_baseline(b).labels));
}

TEST(KMeans, RecoversPlantedClusters) {
  Rng rng(5);
  const double centers[4][3] = {{0, 0, 0}, {50, 0, 0}, {0, 50, 0}, {0, 0, 50}};
  std::vector<double> x;
  std::vector<int> truth;
  for (int i = 0; i < 200; ++i) {
    const int k = static_cast<int>(rng.below(4));
    truth.push_back(k);
    for (int j = 0; j < 3; ++j) x.push_back(centers[k][j] + rng.normal());
  }
  const KMeansResult r = kmeans(x, 200, 3);
  EXPECT_DOUBLE_EQ(best_agreement(r.labels, truth), 1.0);
  // brute-force check: each point sits with its nearest final center
  for (std::size_t i = 0; i < 200; ++i) {
    std::size_t nearest = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < 4; ++c) {
      double dd = 0;
      for (std::size_t j = 0; j < 3; ++j) dd += std::pow(x[i * 3 + j] - r.centers[c * 3 + j], 2);
      if (dd < bd) bd = dd, nearest = c;
    }
    EXPECT_EQ(static_cast<std::size_t>(r.labels[i]), nearest);
  }
}

TEST(KMeans, InertiaNonIncreasingAndDeterministic) {
  Rng rng(6);
  std::vector<double> x(300 * 5);
  for (double& v : x) v = rng.normal();
  const KMeansResult a = kmeans(x, 300, 5), b = kmeans(x, 300, 5);
  for (std::size_t i = 1; i < a.inertia_trace.size(); ++i) EXPECT_LE(a.inertia_trace[i], a.inertia_trace[i - 1] + 1e-9);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.centers, b.centers);
  // the chosen restart has the minimum inertia among single-restart runs
  for (std::size_t restarts = 1; restarts <= 10; ++restarts) {
    KMeansConfig cfg;
    cfg.restarts = restarts;
    EXPECT_LE(a.inertia, kmeans(x, 300, 5, cfg).inertia + 1e-12);
  }
  EXPECT_THROW(kmeans(std::vector<double>(3 * 5), 3, 5), Error);
}

TEST(KMeans, DuplicatePatchesShareALabel) {
  std::vector<double> x(40 * 2, 1.0);
  for (std::size_t i = 0; i < 10; ++i) x[i * 2] = 5.0;  // a second group keeps inertia meaningful
  const KMeansResult r = kmeans(x, 40, 2);
  for (std::size_t i = 11; i < 40; ++i) EXPECT_EQ(r.labels[i], r.labels[10]);
}

TEST(AeKMeans, DescriptorsAndProjection) {
  IntervalBundle b;
  b.image_db = banded(64, 40, 0.5, 7);
  b.norm = image_stats(b.image_db);
  ParameterStore s(1);
  declare_ae(s);
  const DenoiseOutput d = denoise_interval(b, s);
  const auto x = latent_descriptors(d, b.image_db);
  const std::size_t n = d.grid.count(), dim = 65;
  ASSERT_EQ(x.size(), n * dim);
  for (std::size_t j = 0; j < dim; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += x[i * dim + j];
    EXPECT_NEAR(m / static_cast<double>(n), 0.0, 1e-9);
  }
  const LabelMap a = ae_kmeans_baseline(d, b), again = ae_kmeans_baseline(d, b);
  EXPECT_EQ(a, again);
  // a uniform patch labeling projects to that label everywhere
  EXPECT_EQ(project_patch_labels(std::vector<int>(n, 2), d.grid), LabelMap(64, 40, 2));
}

TEST(Refiner, CrossEntropyClosedForms) {
  Graph g;
  Var uniform = g.constant(Tensor({1, 4, 3, 3}, 0.0));
  EXPECT_NEAR(ops::cross_entropy(uniform, std::vector<int>(9, 2)).value().item(), std::log(4.0), 1e-12);
  Tensor sharp({1, 4, 1, 2}, 0.0);
  sharp[0] = 800;  // class 0 at pixel 0
  sharp[3] = 800;  // class 1 at pixel 1
  EXPECT_NEAR(ops::cross_entropy(g.constant(sharp), {0, 1}).value().item(), 0.0, 1e-12);
}

TEST(Refiner, LearnsSeparableInterval) {
  Field x(32, 24);
  LabelMap y(32, 24);
  Rng rng(8);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 24; ++c) {
      const int k = static_cast<int>((r / 4 + c / 6) % 4);
      y(r, c) = k;
      x(r, c) = 0.15 + 0.23 * k + 0.01 * rng.normal();
    }
  const RefinerResult r = train_refiner(refiner_input(x), y, 150, 42);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += r.prediction.data[i] == y.data[i];
  EXPECT_GE(static_cast<double>(hit) / static_cast<double>(y.size()), 0.99);
  EXPECT_EQ(refiner_predict(r.params, refiner_input(x)), r.prediction);
  EXPECT_LT(r.log.final_loss(), r.log.losses.front());
}

TEST(Refiner, MultimodalInputLayout) {
  Field x(3, 2, 0.5);
  Field logs(3, 2, std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  const Tensor t = refiner_input(x, &logs);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 3, 2}));
  EXPECT_EQ(t[6 + 2 * 2 + 1], 0.5);   // channel 1 (first log), row 2
  EXPECT_EQ(t[12 + 1 * 2 + 0], 0.4);  // channel 2 (second log), row 1
  EXPECT_THROW(train_refiner(t, LabelMap(3, 2), 1, 1), Error);
}
