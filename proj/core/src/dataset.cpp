#include "vitens/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "vitens/image.hpp"
#include "vitens/rng.hpp"

namespace vitens {

namespace fs = std::filesystem;

namespace {

bool is_image_ext(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

bool hidden(const fs::path& p) {
    const std::string name = p.filename().string();
    return !name.empty() && name[0] == '.';
}

std::size_t round_half_up(double v) { return static_cast<std::size_t>(std::floor(v + 0.5)); }

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Splits one CSV line; double quotes escape commas and quotes.
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else {
            field += c;
        }
    }
    out.push_back(std::move(field));
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::size_t DatasetIndex::size() const {
    std::size_t n = 0;
    for (const auto& f : files) n += f.size();
    return n;
}

std::vector<DatasetIndex::Item> DatasetIndex::items() const {
    std::vector<Item> out;
    for (std::size_t c = 0; c < files.size(); ++c)
        for (const auto& p : files[c]) out.push_back({p, c});
    return out;
}

DatasetIndex index_directory(const fs::path& root, const std::vector<std::string>& exclude, std::size_t* skipped) {
    if (!fs::is_directory(root)) throw std::invalid_argument("dataset root " + root.string() + " is not a directory");
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && !hidden(entry.path())) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end(), [](const fs::path& a, const fs::path& b) {
        return a.filename().string() < b.filename().string();
    });
    const std::set<std::string> excluded(exclude.begin(), exclude.end());
    DatasetIndex index;
    std::size_t skip = 0;
    for (const auto& dir : dirs) {
        const std::string name = dir.filename().string();
        if (excluded.count(name)) continue;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (hidden(entry.path()) || entry.is_directory()) continue;
            if (!is_image_ext(entry.path()) || !std::ifstream(entry.path(), std::ios::binary)) {
                ++skip;
                continue;
            }
            files.push_back(entry.path());
        }
        if (files.empty()) throw std::invalid_argument("class directory " + dir.string() + " contains no images");
        std::sort(files.begin(), files.end());
        index.classes.push_back(name);
        index.files.push_back(std::move(files));
    }
    if (index.classes.empty()) throw std::invalid_argument("no class directories under " + root.string());
    if (skipped) *skipped = skip;
    return index;
}

void SplitSpec::validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must be nonnegative and sum to 1");
    }
    if (train + val <= 0) throw std::invalid_argument("split leaves nothing for training");
}

SplitCounts split_counts(std::size_t n, const SplitSpec& spec) {
    spec.validate();
    SplitCounts c;
    c.test = std::min(n, round_half_up(static_cast<double>(n) * spec.test));
    const std::size_t rest = n - c.test;
    c.val = std::min(rest, round_half_up(static_cast<double>(rest) * spec.val / (spec.train + spec.val)));
    c.train = rest - c.val;
    return c;
}

SplitResult split_index(const DatasetIndex& index, const SplitSpec& spec) {
    spec.validate();
    SplitResult out;
    for (auto* part : {&out.train, &out.val, &out.test}) {
        part->classes = index.classes;
        part->files.assign(index.classes.size(), {});
    }
    Rng rng(spec.seed);
    auto assign = [&](std::vector<DatasetIndex::Item> items) {
        rng.shuffle(items);
        const SplitCounts counts = split_counts(items.size(), spec);
        for (std::size_t i = 0; i < items.size(); ++i) {
            DatasetIndex& dst = i < counts.test ? out.test : (i < counts.test + counts.val ? out.val : out.train);
            dst.files[items[i].label].push_back(items[i].path);
        }
    };
    if (spec.stratified) {
        for (std::size_t c = 0; c < index.classes.size(); ++c) {
            std::vector<DatasetIndex::Item> items;
            for (const auto& p : index.files[c]) items.push_back({p, c});
            assign(std::move(items));
        }
    } else {
        assign(index.items());
    }
    for (std::size_t c = 0; c < index.classes.size(); ++c) {
        AuditRow row;
        row.name = index.classes[c];
        row.total = index.files[c].size();
        row.counts = {out.train.files[c].size(), out.val.files[c].size(), out.test.files[c].size()};
        out.audit.push_back(row);
    }
    return out;
}

SplitResult index_and_split(const fs::path& root, const SplitSpec& spec, const std::vector<std::string>& exclude) {
    std::size_t skipped = 0;
    const DatasetIndex index = index_directory(root, exclude, &skipped);
    SplitResult out = split_index(index, spec);
    out.skipped = skipped;
    return out;
}

std::string audit_csv(const std::vector<AuditRow>& audit) {
    std::ostringstream out;
    out << "class,total,train,val,test\n";
    AuditRow total{"Total", 0, {}};
    for (const auto& r : audit) {
        out << csv_field(r.name) << ',' << r.total << ',' << r.counts.train << ',' << r.counts.val << ','
            << r.counts.test << '\n';
        total.total += r.total;
        total.counts.train += r.counts.train;
        total.counts.val += r.counts.val;
        total.counts.test += r.counts.test;
    }
    out << "Total," << total.total << ',' << total.counts.train << ',' << total.counts.val << ','
        << total.counts.test << '\n';
    return out.str();
}

Tensor ImageSet::batch(const std::vector<std::size_t>& rows) const {
    const std::size_t per = images.numel() / size();
    const auto src = images.data();
    std::vector<double> out(rows.size() * per);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= size()) throw std::out_of_range("image row " + std::to_string(rows[i]) + " out of range");
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[i] * per), per,
                    out.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    Shape shape = images.shape();
    shape[0] = rows.size();
    return Tensor(shape, std::move(out));
}

Tensor ImageSet::image(std::size_t row) const {
    Tensor b = batch({row});
    return chw_to_hwc(Tensor({3, height(), width()}, b.values()));
}

ImageSet load_image_set(const DatasetIndex& index, std::size_t height, std::size_t width,
                        std::size_t* grayscale_count) {
    ImageSet set;
    set.classes = index.classes;
    const auto items = index.items();
    if (items.empty()) throw std::invalid_argument("cannot load an empty split");
    const std::size_t per = 3 * height * width;
    std::vector<double> data(items.size() * per);
    std::size_t gray = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        bool g = false;
        const Tensor chw = hwc_to_chw(load_resize_image(items[i].path, height, width, &g));
        gray += g;
        std::copy(chw.data().begin(), chw.data().end(), data.begin() + static_cast<std::ptrdiff_t>(i * per));
        set.paths.push_back(items[i].path.string());
        set.labels.push_back(items[i].label);
    }
    set.images = Tensor({items.size(), 3, height, width}, std::move(data));
    if (grayscale_count) *grayscale_count = gray;
    return set;
}

Tensor mean_image(const ImageSet& set) {
    const std::size_t h = set.height(), w = set.width(), plane = h * w;
    const auto src = set.images.data();
    std::array<double, 3> mean{};
    for (std::size_t i = 0; i < set.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < plane; ++p) mean[c] += src[(i * 3 + c) * plane + p];
    for (double& m : mean) m /= static_cast<double>(set.size() * plane);
    std::vector<double> out(plane * 3);
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t c = 0; c < 3; ++c) out[p * 3 + c] = mean[c];
    return Tensor({h, w, 3}, std::move(out));
}

void SyntheticSpec::validate() const {
    if (classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
    if (classes > kMotifCount * kMotifCount) throw std::invalid_argument("too many synthetic classes");
    if (per_class == 0) throw std::invalid_argument("images per class must be positive");
    if (image_size < 8) throw std::invalid_argument("synthetic images must be at least 8x8");
    if (motif_fraction <= 0.0 || motif_fraction > 1.0) throw std::invalid_argument("motif fraction must be in (0,1]");
    if (noise < 0.0) throw std::invalid_argument("noise must be nonnegative");
}

std::string synthetic_class_name(std::size_t label) {
    static const char* shapes[kMotifCount] = {"square", "frame", "plus", "cross", "hstripes", "vstripes", "checker", "disk"};
    char buf[64];
    std::snprintf(buf, sizeof buf, "c%02zu_%s", label, shapes[label % kMotifCount]);
    return buf;
}

Tensor synthesize_image(const SyntheticSpec& spec, std::size_t label, std::uint64_t image_seed, PlantedRegion* region) {
    static const double palette[kMotifCount][3] = {
        {0.90, 0.15, 0.15}, {0.15, 0.85, 0.20}, {0.15, 0.30, 0.95}, {0.95, 0.90, 0.10},
        {0.90, 0.20, 0.85}, {0.10, 0.85, 0.90}, {1.00, 0.55, 0.05}, {0.97, 0.97, 0.97},
    };
    const std::size_t n = spec.image_size;
    const std::size_t s = std::max<std::size_t>(4, static_cast<std::size_t>(std::lround(spec.motif_fraction * n)));
    const std::size_t t = std::max<std::size_t>(1, s / 5);
    const std::size_t shape = label % kMotifCount;
    const double* color = palette[(label % kMotifCount + label / kMotifCount) % kMotifCount];

    Rng rng(image_seed);
    PlantedRegion r;
    r.size = s;
    r.y = static_cast<std::size_t>(rng.below(n - s + 1));
    r.x = static_cast<std::size_t>(rng.below(n - s + 1));
    if (region) *region = r;
    const double base = 0.45 + rng.uniform(-0.05, 0.05);

    auto on_motif = [&](std::size_t u, std::size_t v) {
        const double cu = static_cast<double>(u) - (static_cast<double>(s) - 1) / 2.0;
        const double cv = static_cast<double>(v) - (static_cast<double>(s) - 1) / 2.0;
        const double half_t = static_cast<double>(t) / 2.0 + 0.5;
        switch (shape) {
            case 0: return true;
            case 1: return u < t || v < t || u >= s - t || v >= s - t;
            case 2: return std::abs(cu) < half_t || std::abs(cv) < half_t;
            case 3: return std::abs(cu - cv) < half_t || std::abs(cu + cv) < half_t;
            case 4: return (u / t) % 2 == 0;
            case 5: return (v / t) % 2 == 0;
            case 6: return ((u / t) + (v / t)) % 2 == 0;
            default: return cu * cu + cv * cv <= (static_cast<double>(s) / 2.0) * (static_cast<double>(s) / 2.0);
        }
    };

    std::vector<double> px(n * n * 3);
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const bool planted = r.contains(y, x) && on_motif(y - r.y, x - r.x);
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = (planted ? color[c] : base) + rng.normal(0.0, spec.noise);
                px[(y * n + x) * 3 + c] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return Tensor({n, n, 3}, std::move(px));
}

void synthesize_dataset(const SyntheticSpec& spec, const fs::path& root, bool force) {
    spec.validate();
    if (fs::exists(root) && !fs::is_directory(root)) throw std::invalid_argument(root.string() + " is not a directory");
    if (fs::exists(root) && !fs::is_empty(root)) {
        if (!force) throw std::invalid_argument("output directory " + root.string() + " is not empty (use --force)");
        for (std::size_t k = 0; k < spec.classes; ++k) fs::remove_all(root / synthetic_class_name(k));
    }
    fs::create_directories(root);
    std::ofstream regions(root / "regions.csv", std::ios::trunc);
    if (!regions) throw std::runtime_error("cannot write " + (root / "regions.csv").string());
    regions << "path,label,y,x,size\n";
    for (std::size_t k = 0; k < spec.classes; ++k) {
        const std::string name = synthetic_class_name(k);
        fs::create_directories(root / name);
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            char file[32];
            std::snprintf(file, sizeof file, "%04zu.png", i);
            PlantedRegion r;
            const std::uint64_t seed = mix(spec.seed ^ mix(k * 1000003ULL + i));
            write_png(root / name / file, synthesize_image(spec, k, seed, &r));
            regions << name << '/' << file << ',' << k << ',' << r.y << ',' << r.x << ',' << r.size << '\n';
        }
    }
}

std::vector<std::pair<std::string, PlantedRegion>> read_regions(const fs::path& root) {
    std::ifstream in(root / "regions.csv");
    if (!in) throw std::runtime_error("cannot read " + (root / "regions.csv").string());
    std::string line;
    std::getline(in, line);
    std::vector<std::pair<std::string, PlantedRegion>> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 5) throw std::runtime_error("malformed regions.csv line: " + line);
        out.push_back({f[0], PlantedRegion{std::stoul(f[2]), std::stoul(f[3]), std::stoul(f[4])}});
    }
    return out;
}

void write_prediction_matrix(const PredictionMatrix& matrix, const fs::path& path) {
    matrix.validate(1e-3);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "path,label";
    for (const auto& c : matrix.classes) out << ',' << csv_field(c);
    out << '\n';
    char buf[40];
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
        out << csv_field(matrix.paths[i]) << ',' << matrix.labels[i];
        for (std::size_t k = 0; k < matrix.num_classes(); ++k) {
            std::snprintf(buf, sizeof buf, ",%.17g", matrix.at(i, k));
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

PredictionMatrix read_prediction_matrix(const fs::path& path, const std::vector<std::string>& expected_classes) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv(line);
    if (header.size() < 3 || header[0] != "path" || header[1] != "label") {
        throw std::invalid_argument(path.string() + ": header must start with path,label and list classes");
    }
    PredictionMatrix m;
    m.tag = path.stem().string();
    m.classes.assign(header.begin() + 2, header.end());
    if (!expected_classes.empty() && m.classes != expected_classes) {
        throw std::invalid_argument(path.string() + ": class header does not match the expected class order");
    }
    const std::size_t k = m.classes.size();
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_csv(line);
        const std::string where = path.string() + ": row " + std::to_string(row);
        if (f.size() != k + 2) throw std::invalid_argument(where + " has " + std::to_string(f.size()) + " fields");
        m.paths.push_back(f[0]);
        char* end = nullptr;
        const long long label = std::strtoll(f[1].c_str(), &end, 10);
        if (f[1].empty() || *end != '\0' || label < 0 || static_cast<std::size_t>(label) >= k) {
            throw std::invalid_argument(where + " has invalid label '" + f[1] + "'");
        }
        m.labels.push_back(static_cast<std::size_t>(label));
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double v = std::strtod(f[c + 2].c_str(), &end);
            if (f[c + 2].empty() || *end != '\0' || !std::isfinite(v)) {
                throw std::invalid_argument(where + " has non-numeric value '" + f[c + 2] + "'");
            }
            m.values.push_back(v);
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-3) {
            throw std::invalid_argument(where + " sums to " + std::to_string(sum) + ", not 1");
        }
        ++row;
    }
    return m;
}

}  // namespace vitens
