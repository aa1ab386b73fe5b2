#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "unit/test_util.hpp"
#include "vitens/dataset.hpp"
#include "vitens/image.hpp"

using namespace vitens;
using vitens::testing::TempDir;
namespace vt = vitens::testing;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

void write_tiny_ppm(const fs::path& p) { write_text(p, "P3\n1 1\n255\n10 20 30\n"); }

DatasetIndex synthetic_index(const std::vector<std::size_t>& counts) {
    DatasetIndex idx;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        idx.classes.push_back("class" + std::to_string(c));
        idx.files.emplace_back();
        for (std::size_t i = 0; i < counts[c]; ++i)
            idx.files.back().push_back("class" + std::to_string(c) + "/" + std::to_string(i) + ".png");
    }
    return idx;
}

std::set<std::string> all_paths(const DatasetIndex& idx) {
    std::set<std::string> out;
    for (const auto& files : idx.files)
        for (const auto& f : files) out.insert(f.string());
    return out;
}

/// Per-class totals and train/val/test counts of the published 23-class split.
struct PublishedRow {
    std::size_t total, train, val, test;
};
const std::vector<PublishedRow> kPublished{
    {41, 26, 7, 8},       {53, 33, 9, 11},      {646, 413, 104, 129}, {1148, 734, 184, 230}, {1009, 645, 162, 202},
    {1002, 641, 161, 200}, {989, 632, 159, 198}, {403, 257, 65, 81},   {260, 166, 42, 52},    {6, 4, 1, 1},
    {9, 5, 2, 2},         {131, 84, 21, 26},    {1028, 657, 165, 206}, {999, 639, 160, 200},  {391, 250, 63, 78},
    {764, 488, 123, 153},  {35, 22, 6, 7},       {201, 128, 33, 40},   {11, 7, 2, 2},         {443, 283, 71, 89},
    {28, 18, 5, 5},       {133, 84, 22, 27},    {932, 596, 150, 186},
};

Tensor image_from(std::size_t h, std::size_t w, const std::vector<double>& rgb) { return Tensor({h, w, 3}, rgb); }

/// Raw-pixel nearest-centroid accuracy, centroids from even rows, scored on odd rows.
double nearest_centroid_accuracy(const ImageSet& set) {
    const std::size_t k = set.classes.size();
    const std::size_t d = set.images.numel() / set.size();
    const auto px = set.images.data();
    std::vector<double> centroid(k * d, 0.0);
    std::vector<double> count(k, 0.0);
    for (std::size_t i = 0; i < set.size(); i += 2) {
        for (std::size_t j = 0; j < d; ++j) centroid[set.labels[i] * d + j] += px[i * d + j];
        count[set.labels[i]] += 1;
    }
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t j = 0; j < d; ++j) centroid[c * d + j] /= count[c];
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 1; i < set.size(); i += 2) {
        std::size_t best = 0;
        double best_dist = INFINITY;
        for (std::size_t c = 0; c < k; ++c) {
            double dist = 0;
            for (std::size_t j = 0; j < d; ++j) {
                const double e = px[i * d + j] - centroid[c * d + j];
                dist += e * e;
            }
            if (dist < best_dist) best_dist = dist, best = c;
        }
        hits += best == set.labels[i];
        ++total;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

TEST(SplitCounts, HandTracedExamples) {
    const SplitSpec spec;
    const auto ten = split_counts(10, spec);
    EXPECT_EQ(ten.train, 6u);
    EXPECT_EQ(ten.val, 2u);
    EXPECT_EQ(ten.test, 2u);
    const auto b = split_counts(41, spec);
    EXPECT_EQ(b.train, 26u);
    EXPECT_EQ(b.val, 7u);
    EXPECT_EQ(b.test, 8u);
}

TEST(SplitCounts, PublishedTableWithinOnePerCell) {
    std::size_t train = 0, val = 0, test = 0;
    for (const auto& row : kPublished) {
        const auto c = split_counts(row.total, SplitSpec{});
        EXPECT_LE(std::abs(static_cast<long>(c.train) - static_cast<long>(row.train)), 1) << row.total;
        EXPECT_LE(std::abs(static_cast<long>(c.val) - static_cast<long>(row.val)), 1) << row.total;
        EXPECT_LE(std::abs(static_cast<long>(c.test) - static_cast<long>(row.test)), 1) << row.total;
        EXPECT_EQ(c.train + c.val + c.test, row.total);
        train += c.train, val += c.val, test += c.test;
    }
    EXPECT_LE(std::abs(static_cast<long>(train) - 6823), 2);
    EXPECT_LE(std::abs(static_cast<long>(val) - 1706), 2);
    EXPECT_LE(std::abs(static_cast<long>(test) - 2133), 2);
}

TEST(SplitSpec, RatiosMustSumToOne) {
    SplitSpec bad;
    bad.test = 0.3;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = SplitSpec{};
    bad.val = -0.16, bad.train = 0.96;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Split, DisjointExhaustiveAndStratified) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::size_t> counts;
        for (int c = 0; c < 5; ++c) counts.push_back(1 + rng.below(200));
        const auto idx = synthetic_index(counts);
        SplitSpec spec;
        spec.seed = static_cast<std::uint64_t>(trial);
        const auto s = split_index(idx, spec);
        const auto tr = all_paths(s.train), va = all_paths(s.val), te = all_paths(s.test);
        EXPECT_EQ(tr.size() + va.size() + te.size(), all_paths(idx).size());
        std::set<std::string> u(tr);
        u.insert(va.begin(), va.end());
        u.insert(te.begin(), te.end());
        EXPECT_EQ(u, all_paths(idx));
        for (std::size_t c = 0; c < counts.size(); ++c) {
            const double n = static_cast<double>(counts[c]);
            EXPECT_LE(std::abs(static_cast<double>(s.train.files[c].size()) - 0.64 * n), 1.0);
            EXPECT_LE(std::abs(static_cast<double>(s.val.files[c].size()) - 0.16 * n), 1.0);
            EXPECT_LE(std::abs(static_cast<double>(s.test.files[c].size()) - 0.20 * n), 1.0);
            EXPECT_EQ(s.audit[c].total, counts[c]);
        }
    }
}

TEST(Split, SameSeedSameSplitDifferentSeedDifferentSplit) {
    const auto idx = synthetic_index({50, 60, 70});
    SplitSpec spec;
    spec.seed = 5;
    const auto a = split_index(idx, spec), b = split_index(idx, spec);
    EXPECT_EQ(a.test.files, b.test.files);
    EXPECT_EQ(a.val.files, b.val.files);
    spec.seed = 6;
    EXPECT_NE(split_index(idx, spec).test.files, a.test.files);
}

TEST(Split, PooledSplitStillPartitions) {
    const auto idx = synthetic_index({30, 5, 12});
    SplitSpec spec;
    spec.stratified = false;
    const auto s = split_index(idx, spec);
    EXPECT_EQ(s.test.size(), 9u);
    EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), 47u);
}

TEST(Split, AuditCsvHasTotalRow) {
    const auto s = split_index(synthetic_index({10, 41}), SplitSpec{});
    const std::string csv = audit_csv(s.audit);
    EXPECT_NE(csv.find("class0,10,6,2,2"), std::string::npos) << csv;
    EXPECT_NE(csv.find("Total,51,32,9,10"), std::string::npos) << csv;
}

TEST(Index, LexicographicClassesAndSkipping) {
    TempDir dir("index");
    write_tiny_ppm(dir / "zeta/a.ppm");
    write_tiny_ppm(dir / "alpha/b.ppm");
    write_tiny_ppm(dir / "alpha/a.ppm");
    write_text(dir / "alpha/notes.txt", "x");
    write_tiny_ppm(dir / "alpha/.hidden.ppm");
    write_tiny_ppm(dir / ".cache/a.ppm");
    write_tiny_ppm(dir / "Mid/a.ppm");
    std::size_t skipped = 0;
    const auto idx = index_directory(dir.path(), {}, &skipped);
    EXPECT_EQ(idx.classes, (std::vector<std::string>{"Mid", "alpha", "zeta"}));
    ASSERT_EQ(idx.files[1].size(), 2u);
    EXPECT_EQ(idx.files[1][0].filename(), "a.ppm");
    EXPECT_EQ(skipped, 1u);
    EXPECT_EQ(idx.size(), 4u);
    const auto items = idx.items();
    EXPECT_EQ(items.back().label, 2u);

    const auto filtered = index_directory(dir.path(), {"zeta"});
    EXPECT_EQ(filtered.classes, (std::vector<std::string>{"Mid", "alpha"}));
}

TEST(Index, EmptyClassIsNamed) {
    TempDir dir("empty");
    write_tiny_ppm(dir / "a/x.ppm");
    fs::create_directories(dir / "b_empty");
    try {
        index_directory(dir.path());
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("b_empty"), std::string::npos);
    }
    EXPECT_THROW(index_directory(dir / "missing"), std::invalid_argument);
}

TEST(Image, ConstantResizesToConstant) {
    const Tensor src = Tensor::full({5, 7, 3}, 0.0);
    std::vector<double> rgb;
    for (int i = 0; i < 35; ++i) rgb.insert(rgb.end(), {0.2, 0.5, 0.9});
    const Tensor out = resize_bilinear(image_from(5, 7, rgb), 13, 3);
    ASSERT_EQ(out.shape(), (Shape{13, 3, 3}));
    for (std::size_t i = 0; i < out.numel(); i += 3) {
        EXPECT_NEAR(out[i], 0.2, 1e-15);
        EXPECT_NEAR(out[i + 1], 0.5, 1e-15);
        EXPECT_NEAR(out[i + 2], 0.9, 1e-15);
    }
    EXPECT_EQ(src.numel(), 105u);
}

TEST(Image, SameSizeResizeIsIdentity) {
    Rng rng(2);
    const Tensor src = vt::random_tensor({6, 4, 3}, rng, 0.0, 1.0);
    EXPECT_TRUE(vt::bitwise_equal(resize_bilinear(src, 6, 4), src));
}

TEST(Image, CheckerboardUpsampleMatchesBilinearTrace) {
    // 2x2 checkerboard with channels (v, 1-v, 0.5).
    const double s[2][2] = {{0.0, 1.0}, {1.0, 0.0}};
    std::vector<double> rgb;
    for (auto& row : s)
        for (double v : row) rgb.insert(rgb.end(), {v, 1.0 - v, 0.5});
    const Tensor out = resize_bilinear(image_from(2, 2, rgb), 4, 4);
    // Half-pixel centers map output i to source (i + 0.5) / 2 - 0.5, clamped to [0, 1].
    const double w[4] = {0.0, 0.25, 0.75, 1.0};
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
            const double a = w[y], b = w[x];
            const double v = (1 - a) * (1 - b) * s[0][0] + (1 - a) * b * s[0][1] + a * (1 - b) * s[1][0] + a * b * s[1][1];
            EXPECT_NEAR(out[(y * 4 + x) * 3], v, 1e-15) << y << "," << x;
            EXPECT_NEAR(out[(y * 4 + x) * 3 + 1], 1.0 - v, 1e-15);
            EXPECT_NEAR(out[(y * 4 + x) * 3 + 2], 0.5, 1e-15);
        }
}

TEST(Image, PngAndPpmRoundTripEightBitValues) {
    TempDir dir("img");
    Rng rng(3);
    std::vector<double> rgb(5 * 6 * 3);
    for (double& v : rgb) v = static_cast<double>(rng.below(256)) / 255.0;
    const Tensor img = image_from(5, 6, rgb);
    for (const char* name : {"a.png", "a.ppm"}) {
        write_image(dir / name, img);
        const auto decoded = read_image(dir / name);
        EXPECT_FALSE(decoded.grayscale);
        ASSERT_EQ(decoded.pixels.shape(), img.shape());
        for (std::size_t i = 0; i < rgb.size(); ++i) EXPECT_NEAR(decoded.pixels[i], rgb[i], 1e-15) << name;
        EXPECT_TRUE(vt::bitwise_equal(load_resize_image(dir / name, 5, 6), decoded.pixels));
    }
}

TEST(Image, GrayscaleIsReplicatedAndFlagged) {
    TempDir dir("gray");
    write_text(dir / "g.pgm", "P2\n2 1\n255\n0 255\n");
    bool gray = false;
    const Tensor t = load_resize_image(dir / "g.pgm", 1, 2, &gray);
    EXPECT_TRUE(gray);
    EXPECT_EQ(t.values(), (std::vector<double>{0, 0, 0, 1, 1, 1}));
}

TEST(Image, UndecodableFileNamesPath) {
    TempDir dir("bad");
    write_text(dir / "broken.png", "not a png");
    try {
        read_image(dir / "broken.png");
        FAIL() << "expected ImageError";
    } catch (const ImageError& e) {
        EXPECT_NE(std::string(e.what()).find("broken.png"), std::string::npos);
    }
}

TEST(Image, LayoutConversionsRoundTrip) {
    Rng rng(4);
    const Tensor hwc = vt::random_tensor({3, 5, 3}, rng);
    const Tensor chw = hwc_to_chw(hwc);
    EXPECT_EQ(chw.shape(), (Shape{3, 3, 5}));
    EXPECT_EQ(chw[1 * 15 + 2 * 5 + 4], hwc[(2 * 5 + 4) * 3 + 1]);
    EXPECT_TRUE(vt::bitwise_equal(chw_to_hwc(chw), hwc));
}

TEST(Synth, CountsLayoutAndRegions) {
    TempDir dir("synth");
    SyntheticSpec spec;
    synthesize_dataset(spec, dir / "d");
    const auto idx = index_directory(dir / "d");
    EXPECT_EQ(idx.classes.size(), 4u);
    EXPECT_EQ(idx.size(), 256u);
    for (const auto& f : idx.files) EXPECT_EQ(f.size(), 64u);
    const auto regions = read_regions(dir / "d");
    ASSERT_EQ(regions.size(), 256u);
    for (const auto& [path, r] : regions) {
        EXPECT_TRUE(fs::exists(dir / "d" / path)) << path;
        EXPECT_LE(r.y + r.size, 32u);
        EXPECT_LE(r.x + r.size, 32u);
    }
}

TEST(Synth, SameSeedIsBitwiseIdentical) {
    TempDir dir("synth_det");
    SyntheticSpec spec;
    spec.per_class = 3;
    synthesize_dataset(spec, dir / "a");
    synthesize_dataset(spec, dir / "b");
    const auto a = index_directory(dir / "a");
    const auto b = index_directory(dir / "b");
    auto bytes = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    for (std::size_t c = 0; c < a.classes.size(); ++c)
        for (std::size_t i = 0; i < a.files[c].size(); ++i) EXPECT_EQ(bytes(a.files[c][i]), bytes(b.files[c][i]));
    EXPECT_EQ(bytes(dir / "a/regions.csv"), bytes(dir / "b/regions.csv"));
}

TEST(Synth, NonEmptyDirectoryNeedsForce) {
    TempDir dir("synth_force");
    write_text(dir / "d/keep.txt", "x");
    SyntheticSpec spec;
    spec.per_class = 2;
    EXPECT_THROW(synthesize_dataset(spec, dir / "d"), std::invalid_argument);
    EXPECT_NO_THROW(synthesize_dataset(spec, dir / "d", true));
    EXPECT_EQ(index_directory(dir / "d").size(), 8u);
}

TEST(Synth, MotifsArePairwiseDistinct) {
    SyntheticSpec spec;
    spec.classes = 16;
    spec.noise = 0.0;
    spec.motif_fraction = 1.0;
    std::set<std::vector<double>> seen;
    for (std::size_t k = 0; k < spec.classes; ++k) seen.insert(synthesize_image(spec, k, 1).values());
    EXPECT_EQ(seen.size(), 16u);
    std::set<std::string> names;
    for (std::size_t k = 0; k < 16; ++k) names.insert(synthetic_class_name(k));
    EXPECT_EQ(names.size(), 16u);
}

TEST(Synth, NearestCentroidBaselineLearnsIt) {
    TempDir dir("synth_nc");
    SyntheticSpec spec;
    synthesize_dataset(spec, dir / "d");
    const auto set = load_image_set(index_directory(dir / "d"), 32, 32);
    EXPECT_GE(nearest_centroid_accuracy(set), 0.80);
}

TEST(PredictionIo, RoundTripWithinTolerance) {
    TempDir dir("pm");
    PredictionMatrix m;
    m.tag = "t";
    m.classes = {"a", "b b", "c,d"};
    Rng rng(5);
    for (std::size_t i = 0; i < 40; ++i) {
        m.paths.push_back("dir/img " + std::to_string(i) + ".png");
        m.labels.push_back(rng.below(3));
        double x = rng.uniform(), y = rng.uniform() * (1 - x);
        m.values.insert(m.values.end(), {x, y, 1 - x - y});
    }
    write_prediction_matrix(m, dir / "m.csv");
    const auto r = read_prediction_matrix(dir / "m.csv", m.classes);
    EXPECT_EQ(r.classes, m.classes);
    EXPECT_EQ(r.paths, m.paths);
    EXPECT_EQ(r.labels, m.labels);
    ASSERT_EQ(r.values.size(), m.values.size());
    for (std::size_t i = 0; i < m.values.size(); ++i) EXPECT_NEAR(r.values[i], m.values[i], 1e-9);
}

TEST(PredictionIo, HandWrittenFileParses) {
    TempDir dir("pm_hand");
    write_text(dir / "h.csv", "path,label,x,y\np0,0,0.75,0.25\np1,1,0.1,0.9\n");
    const auto m = read_prediction_matrix(dir / "h.csv");
    EXPECT_EQ(m.classes, (std::vector<std::string>{"x", "y"}));
    EXPECT_EQ(m.labels, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(m.values, (std::vector<double>{0.75, 0.25, 0.1, 0.9}));
}

TEST(PredictionIo, RejectsReorderedHeaderAndBadRows) {
    TempDir dir("pm_bad");
    write_text(dir / "h.csv", "path,label,x,y\np0,0,0.75,0.25\n");
    EXPECT_THROW(read_prediction_matrix(dir / "h.csv", {"y", "x"}), std::invalid_argument);
    write_text(dir / "s.csv", "path,label,x,y\np0,0,0.5,0.5\np1,1,0.7,0.7\n");
    try {
        read_prediction_matrix(dir / "s.csv");
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
    }
    write_text(dir / "l.csv", "path,label,x,y\np0,2,0.5,0.5\n");
    EXPECT_THROW(read_prediction_matrix(dir / "l.csv"), std::invalid_argument);
    write_text(dir / "n.csv", "path,label,x,y\np0,0,abc,0.5\n");
    EXPECT_THROW(read_prediction_matrix(dir / "n.csv"), std::invalid_argument);
    write_text(dir / "e.csv", "");
    EXPECT_THROW(read_prediction_matrix(dir / "e.csv"), std::invalid_argument);
}
