#include "mhg/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace mhg {

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

double bilinear_at(const ImageGrid& img, double sy, double sx) {
    const int x0 = clampi(static_cast<int>(std::floor(sx)), 0, img.w - 1);
    const int y0 = clampi(static_cast<int>(std::floor(sy)), 0, img.h - 1);
    const int x1 = clampi(x0 + 1, 0, img.w - 1);
    const int y1 = clampi(y0 + 1, 0, img.h - 1);
    const double ax = std::min(std::max(sx - x0, 0.0), 1.0);
    const double ay = std::min(std::max(sy - y0, 0.0), 1.0);
    return img.at(y0, x0) * (1 - ax) * (1 - ay) + img.at(y0, x1) * ax * (1 - ay) +
           img.at(y1, x0) * (1 - ax) * ay + img.at(y1, x1) * ax * ay;
}

}  // namespace

Sample pad_and_resize(const Sample& s, int size) {
    if (size <= 0) throw std::runtime_error("pad_and_resize: size must be > 0");
    const int side = std::max(s.mask.h, s.mask.w);
    const int py = (side - s.mask.h) / 2;
    const int px = (side - s.mask.w) / 2;

    Sample padded;
    padded.subject_id = s.subject_id;
    padded.annotated_organs = s.annotated_organs;
    if (side == s.mask.h && side == s.mask.w) {
        padded.image = s.image;
        padded.mask = s.mask;
    } else {
        padded.image = ImageGrid(side, side, 0.0);
        padded.mask = LabelMask(side, side, 0);
        for (int y = 0; y < s.mask.h; ++y)
            for (int x = 0; x < s.mask.w; ++x) {
                padded.image.at(y + py, x + px) = s.image.at(y, x);
                padded.mask.at(y + py, x + px) = s.mask.at(y, x);
            }
    }
    if (side == size) return padded;

    Sample out;
    out.subject_id = s.subject_id;
    out.annotated_organs = s.annotated_organs;
    out.image = ImageGrid(size, size, 0.0);
    out.mask = LabelMask(size, size, 0);
    const double scale = static_cast<double>(side) / size;
    for (int y = 0; y < size; ++y) {
        const double sy = (y + 0.5) * scale - 0.5;
        const int ny = clampi(static_cast<int>(std::lround(sy)), 0, side - 1);
        for (int x = 0; x < size; ++x) {
            const double sx = (x + 0.5) * scale - 0.5;
            const int nx = clampi(static_cast<int>(std::lround(sx)), 0, side - 1);
            out.mask.at(y, x) = padded.mask.at(ny, nx);
            out.image.at(y, x) = bilinear_at(padded.image, sy, sx);
        }
    }
    return out;
}

namespace {

void flip_h(Sample& s) {
    for (int y = 0; y < s.mask.h; ++y)
        for (int x = 0; x < s.mask.w / 2; ++x) {
            std::swap(s.mask.at(y, x), s.mask.at(y, s.mask.w - 1 - x));
            std::swap(s.image.at(y, x), s.image.at(y, s.mask.w - 1 - x));
        }
}

void flip_v(Sample& s) {
    for (int y = 0; y < s.mask.h / 2; ++y)
        for (int x = 0; x < s.mask.w; ++x) {
            std::swap(s.mask.at(y, x), s.mask.at(s.mask.h - 1 - y, x));
            std::swap(s.image.at(y, x), s.image.at(s.mask.h - 1 - y, x));
        }
}

void transpose(Sample& s) {
    LabelMask m(s.mask.w, s.mask.h, 0);
    ImageGrid g(s.mask.w, s.mask.h, 0.0);
    for (int y = 0; y < s.mask.h; ++y)
        for (int x = 0; x < s.mask.w; ++x) {
            m.at(x, y) = s.mask.at(y, x);
            g.at(x, y) = s.image.at(y, x);
        }
    s.mask = m;
    s.image = g;
}

void rotate(Sample& s, double deg) {
    const double th = deg * M_PI / 180.0;
    const double c = std::cos(th), sn = std::sin(th);
    const double cy = s.mask.h / 2.0, cx = s.mask.w / 2.0;
    LabelMask m(s.mask.h, s.mask.w, 0);
    ImageGrid g(s.mask.h, s.mask.w, 0.0);
    for (int y = 0; y < s.mask.h; ++y)
        for (int x = 0; x < s.mask.w; ++x) {
            // inverse rotation of the destination pixel center
            const double dx = (x + 0.5) - cx, dy = (y + 0.5) - cy;
            const double sx = c * dx + sn * dy + cx - 0.5;
            const double sy = -sn * dx + c * dy + cy - 0.5;
            const int nx = static_cast<int>(std::lround(sx));
            const int ny = static_cast<int>(std::lround(sy));
            if (s.mask.in_bounds(ny, nx)) {
                m.at(y, x) = s.mask.at(ny, nx);
                if (sx >= 0 && sy >= 0 && sx <= s.mask.w - 1 && sy <= s.mask.h - 1)
                    g.at(y, x) = bilinear_at(s.image, sy, sx);
            }
        }
    s.mask = m;
    s.image = g;
}

}  // namespace

Sample augment(const Sample& s, const DatasetConfig& cfg, Rng& rng) {
    Sample out = s;
    if (cfg.aug_flip_h && rng.bernoulli(0.5)) flip_h(out);
    if (cfg.aug_flip_v && rng.bernoulli(0.5)) flip_v(out);
    if (cfg.aug_rotate && rng.bernoulli(0.5)) rotate(out, rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg));
    if (cfg.aug_transpose && rng.bernoulli(0.5)) transpose(out);
    return out;
}

SplitResult split_subjects(const std::vector<Sample>& samples, double test_fraction, uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::runtime_error("split_subjects: test_fraction must be in (0,1)");
    std::vector<std::string> subjects;
    std::set<std::string> seen;
    for (const auto& s : samples)
        if (seen.insert(s.subject_id).second) subjects.push_back(s.subject_id);
    if (subjects.size() < 3) throw std::runtime_error("split_subjects: need at least 3 distinct subjects");

    Rng rng(seed);
    rng.shuffle(subjects);
    const int n = static_cast<int>(subjects.size());
    int n_test = std::max(1, static_cast<int>(std::lround(n * test_fraction)));
    int n_val = n_test;
    while (n_test + n_val >= n) {
        if (n_val > 1) --n_val;
        else --n_test;
    }

    std::set<std::string> test_set(subjects.begin(), subjects.begin() + n_test);
    std::set<std::string> val_set(subjects.begin() + n_test, subjects.begin() + n_test + n_val);

    SplitResult r;
    for (int i = 0; i < static_cast<int>(samples.size()); ++i) {
        if (test_set.count(samples[i].subject_id)) r.test.push_back(i);
        else if (val_set.count(samples[i].subject_id)) r.val.push_back(i);
        else r.train.push_back(i);
    }
    return r;
}

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : entries) {
        j.push_back({{"subject_id", e.subject_id},
                     {"image_path", e.image_path},
                     {"mask_path", e.mask_path},
                     {"annotated_organs", e.annotated_organs}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("manifest: cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest: parse failure in '" + path + "': " + e.what());
    }
    if (!j.is_array()) throw std::runtime_error("manifest: top level must be an array");
    std::vector<ManifestEntry> entries;
    for (const auto& item : j) {
        ManifestEntry e;
        e.subject_id = item.at("subject_id").get<std::string>();
        e.image_path = item.at("image_path").get<std::string>();
        e.mask_path = item.at("mask_path").get<std::string>();
        e.annotated_organs = item.at("annotated_organs").get<std::vector<int>>();
        entries.push_back(std::move(e));
    }
    return entries;
}

std::vector<Sample> load_dataset(const std::string& manifest_path) {
    const auto entries = load_manifest(manifest_path);
    const auto root = std::filesystem::path(manifest_path).parent_path();
    std::vector<Sample> samples;
    samples.reserve(entries.size());
    for (const auto& e : entries) {
        Sample s;
        s.subject_id = e.subject_id;
        s.annotated_organs = e.annotated_organs;
        s.image = load_pgm_image((root / e.image_path).string());
        s.mask = load_pgm((root / e.mask_path).string());
        if (s.image.h != s.mask.h || s.image.w != s.mask.w)
            throw std::runtime_error("dataset: image/mask size mismatch for subject '" + e.subject_id + "'");
        samples.push_back(std::move(s));
    }
    return samples;
}

void drop_organ_annotation(Sample& s, int organ) {
    for (auto& px : s.mask.v)
        if (px == organ) px = 0;
    auto& a = s.annotated_organs;
    a.erase(std::remove(a.begin(), a.end(), organ), a.end());
}

}  // namespace mhg
