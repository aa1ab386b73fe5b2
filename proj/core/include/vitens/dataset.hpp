#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vitens/ensemble.hpp"
#include "vitens/tensor.hpp"

namespace vitens {

/// Class folders in lexicographic order; label = position in `classes`.
struct DatasetIndex {
    std::vector<std::string> classes;
    std::vector<std::vector<std::filesystem::path>> files;

    std::size_t size() const;
    struct Item {
        std::filesystem::path path;
        std::size_t label;
    };
    /// Items grouped by class, in stored order.
    std::vector<Item> items() const;
};

/// Lists `root/<class>/<file>`. Hidden entries are ignored; files that
/// cannot be opened or are not .png/.ppm/.pgm are skipped and counted.
/// Classes named in `exclude` are dropped. An empty class folder is an error.
DatasetIndex index_directory(const std::filesystem::path& root, const std::vector<std::string>& exclude = {},
                             std::size_t* skipped = nullptr);

struct SplitSpec {
    double train = 0.64;
    double val = 0.16;
    double test = 0.20;
    std::uint64_t seed = 0;
    bool stratified = true;

    void validate() const;
};

struct SplitCounts {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
};

/// test = round(n * test); val = round((n - test) * val / (train + val));
/// train gets the rest. Halves round up.
SplitCounts split_counts(std::size_t n, const SplitSpec& spec);

struct AuditRow {
    std::string name;
    std::size_t total = 0;
    SplitCounts counts;
};

struct SplitResult {
    DatasetIndex train;
    DatasetIndex val;
    DatasetIndex test;
    std::vector<AuditRow> audit;
    std::size_t skipped = 0;
};

/// Seeded per-class shuffle, then the counts above. Non-stratified splits
/// apply the rule to the pooled files instead.
SplitResult split_index(const DatasetIndex& index, const SplitSpec& spec);
SplitResult index_and_split(const std::filesystem::path& root, const SplitSpec& spec,
                            const std::vector<std::string>& exclude = {});

/// Audit table as CSV: class,total,train,val,test plus a Total row.
std::string audit_csv(const std::vector<AuditRow>& audit);

/// Decoded images as one (N,3,H,W) tensor.
struct ImageSet {
    std::vector<std::string> classes;
    std::vector<std::string> paths;
    std::vector<std::size_t> labels;
    Tensor images;

    std::size_t size() const { return labels.size(); }
    std::size_t height() const { return images.shape()[2]; }
    std::size_t width() const { return images.shape()[3]; }
    /// (B,3,H,W) copy of the given rows.
    Tensor batch(const std::vector<std::size_t>& rows) const;
    /// (H,W,3) copy of one image.
    Tensor image(std::size_t row) const;
};

/// Loads and resizes every file; `grayscale_count` reports replicated
/// single-channel sources.
ImageSet load_image_set(const DatasetIndex& index, std::size_t height, std::size_t width,
                        std::size_t* grayscale_count = nullptr);

/// Per-channel mean over all images, broadcast to an (H,W,3) image.
Tensor mean_image(const ImageSet& set);

struct SyntheticSpec {
    std::size_t classes = 4;
    std::size_t per_class = 64;
    std::size_t image_size = 32;
    /// Motif side length as a fraction of the image side.
    double motif_fraction = 0.4;
    double noise = 0.08;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Square that holds the planted motif.
struct PlantedRegion {
    std::size_t y = 0;
    std::size_t x = 0;
    std::size_t size = 0;

    bool contains(std::size_t py, std::size_t px) const { return py >= y && py < y + size && px >= x && px < x + size; }
};

/// Number of distinct motif shapes; classes beyond it reuse shapes with
/// other colors.
inline constexpr std::size_t kMotifCount = 8;

std::string synthetic_class_name(std::size_t label);

/// One noisy (H,W,3) image with the class motif planted at a random square.
Tensor synthesize_image(const SyntheticSpec& spec, std::size_t label, std::uint64_t image_seed,
                        PlantedRegion* region = nullptr);

/// Writes root/<class>/<nnnn>.png and root/regions.csv
/// (path,label,y,x,size). A non-empty `root` is rejected unless `force`.
void synthesize_dataset(const SyntheticSpec& spec, const std::filesystem::path& root, bool force = false);

/// Reads regions.csv written by synthesize_dataset, keyed by relative path.
std::vector<std::pair<std::string, PlantedRegion>> read_regions(const std::filesystem::path& root);

/// CSV with header path,label,<class...>; values printed with 17
/// significant digits.
void write_prediction_matrix(const PredictionMatrix& matrix, const std::filesystem::path& path);
/// Rejects a header that differs from `expected_classes` (when non-empty)
/// and any row whose sum is off by more than 1e-3.
PredictionMatrix read_prediction_matrix(const std::filesystem::path& path,
                                        const std::vector<std::string>& expected_classes = {});

}  // namespace vitens
