#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace xcnn {

enum class Label : int { COVID = 0, Normal = 1 };
enum class Split { Train, Test, Val };

inline constexpr std::array<Label, 2> kLabels{Label::COVID, Label::Normal};
inline constexpr std::array<Split, 3> kSplits{Split::Train, Split::Test, Split::Val};

inline std::string_view label_name(Label l) { return l == Label::COVID ? "COVID" : "Normal"; }
inline int class_index(Label l) { return static_cast<int>(l); }

inline std::string_view split_name(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Val: return "val";
    }
    return "?";
}

inline Label parse_label(std::string_view s) {
    if (s == "COVID") return Label::COVID;
    if (s == "Normal") return Label::Normal;
    throw DataError("unknown label '" + std::string(s) + "' (expected COVID or Normal)");
}

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    if (s == "val") return Split::Val;
    throw DataError("unknown split '" + std::string(s) + "' (expected train, test or val)");
}

struct LabeledPath {
    std::string path;
    Label label;
};

/// One manifest row. Augmented records reuse the path of their source image
/// and are rewarped every epoch from a stream keyed by `seed`.
struct SampleRecord {
    std::string path;
    Label label = Label::Normal;
    Split split = Split::Train;
    bool augmented = false;
    std::uint64_t slot = 0; // augmented records only
    std::uint64_t seed = 0;

    std::string origin() const { return augmented ? "augmented:" + std::to_string(slot) : "original"; }

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
    std::vector<SampleRecord> records;
    std::uint64_t seed = 0;

    std::size_t count(Split s, Label l) const {
        return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const SampleRecord& r) {
            return r.split == s && r.label == l;
        }));
    }
    std::size_t count(Split s) const { return count(s, Label::COVID) + count(s, Label::Normal); }

    std::vector<SampleRecord> select(Split s, bool include_augmented = true) const {
        std::vector<SampleRecord> out;
        for (const auto& r : records)
            if (r.split == s && (include_augmented || !r.augmented)) out.push_back(r);
        return out;
    }

    bool has_augmented() const {
        return std::any_of(records.begin(), records.end(), [](const SampleRecord& r) { return r.augmented; });
    }

    /// Canonical order: path, then originals before augmented slots in slot order.
    void sort() {
        std::sort(records.begin(), records.end(), [](const SampleRecord& a, const SampleRecord& b) {
            return std::tie(a.path, a.augmented, a.slot) < std::tie(b.path, b.augmented, b.slot);
        });
    }
};

// ---------------------------------------------------------------- splitting

struct SplitFractions {
    double train = 0.7;
    double test = 0.2;
};

/// Stratified split: per class, shuffle then take floor(0.7 n) for Train,
/// floor(0.2 n) for Test and the remainder for Val.
inline DatasetManifest split_dataset(std::vector<LabeledPath> items, std::uint64_t seed,
                                     const SplitFractions& fractions = {}) {
    DatasetManifest m;
    m.seed = seed;
    for (Label label : kLabels) {
        std::vector<std::string> paths;
        for (const auto& it : items)
            if (it.label == label) paths.push_back(it.path);
        if (paths.empty()) throw DataError("no " + std::string(label_name(label)) + " images to split");
        std::sort(paths.begin(), paths.end());
        if (std::adjacent_find(paths.begin(), paths.end()) != paths.end())
            throw DataError("duplicate path in " + std::string(label_name(label)) + " class");
        Rng rng = Rng::derive(seed, {Rng::tag("split"), static_cast<std::uint64_t>(class_index(label))});
        shuffle(paths, rng);
        const std::size_t n = paths.size();
        const auto n_train = static_cast<std::size_t>(fractions.train * static_cast<double>(n));
        const auto n_test = static_cast<std::size_t>(fractions.test * static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const Split s = i < n_train ? Split::Train : i < n_train + n_test ? Split::Test : Split::Val;
            m.records.push_back({paths[i], label, s, false, 0, seed});
        }
    }
    std::vector<std::string> all;
    for (const auto& r : m.records) all.push_back(r.path);
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
        throw DataError("a path is labeled both COVID and Normal");
    m.sort();
    return m;
}

/// Adds Augmented Train records of the minority class until both classes
/// have as many Train records. Slot k draws from the k-th minority source
/// (cycling in path order). Test and Val are untouched.
inline DatasetManifest balance_by_augmentation(DatasetManifest m, std::uint64_t seed) {
    const std::size_t covid = m.count(Split::Train, Label::COVID);
    const std::size_t normal = m.count(Split::Train, Label::Normal);
    if (covid == normal) return m;
    const Label minority = covid < normal ? Label::COVID : Label::Normal;
    const std::size_t deficit = covid < normal ? normal - covid : covid - normal;

    std::vector<std::string> sources;
    std::uint64_t next_slot = 0;
    for (const auto& r : m.records) {
        if (r.augmented) next_slot = std::max(next_slot, r.slot + 1);
        else if (r.split == Split::Train && r.label == minority) sources.push_back(r.path);
    }
    if (sources.empty())
        throw DataError("cannot balance: no original " + std::string(label_name(minority)) + " training images");
    std::sort(sources.begin(), sources.end());
    for (std::size_t k = 0; k < deficit; ++k) {
        const std::uint64_t slot = next_slot + k;
        m.records.push_back({sources[k % sources.size()], minority, Split::Train, true, slot,
                             Rng::derive_seed(seed, {Rng::tag("balance"), slot})});
    }
    m.sort();
    return m;
}

// ---------------------------------------------------------------- manifest CSV

namespace detail {
inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

/// Splits one CSV line, honoring double-quoted fields.
inline std::vector<std::string> csv_split(std::string_view line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                fields.back() += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            fields.emplace_back();
        } else {
            fields.back() += ch;
        }
    }
    if (quoted) throw DataError("unterminated quote in CSV line");
    return fields;
}

inline std::uint64_t parse_u64(std::string_view s, const char* what) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw DataError(std::string("bad ") + what + " '" + std::string(s) + "'");
    return v;
}
} // namespace detail

inline constexpr std::string_view kManifestHeader = "path,label,split,origin,seed";

inline std::string manifest_to_csv(DatasetManifest m) {
    m.sort();
    std::string out(kManifestHeader);
    out += '\n';
    for (const auto& r : m.records) {
        out += detail::csv_field(r.path) + ',' + std::string(label_name(r.label)) + ',' +
               std::string(split_name(r.split)) + ',' + r.origin() + ',' + std::to_string(r.seed) + '\n';
    }
    return out;
}

inline DatasetManifest manifest_from_csv(std::string_view text) {
    DatasetManifest m;
    std::size_t line_no = 0;
    bool seeded = false;
    while (!text.empty()) {
        const std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line_no == 1) {
            if (line != kManifestHeader)
                throw DataError("manifest header must be '" + std::string(kManifestHeader) + "'");
            continue;
        }
        if (line.empty()) continue;
        try {
            const auto f = detail::csv_split(line);
            if (f.size() != 5) throw DataError("expected 5 fields, got " + std::to_string(f.size()));
            SampleRecord r;
            r.path = f[0];
            r.label = parse_label(f[1]);
            r.split = parse_split(f[2]);
            if (f[3] != "original") {
                constexpr std::string_view prefix = "augmented:";
                if (f[3].rfind(prefix, 0) != 0) throw DataError("bad origin '" + f[3] + "'");
                r.augmented = true;
                r.slot = detail::parse_u64(std::string_view(f[3]).substr(prefix.size()), "augmented slot");
                if (r.split != Split::Train) throw DataError("augmented record outside the train split");
            }
            r.seed = detail::parse_u64(f[4], "seed");
            if (!r.augmented && !seeded) {
                m.seed = r.seed;
                seeded = true;
            }
            m.records.push_back(std::move(r));
        } catch (const DataError& e) {
            throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (line_no == 0) throw DataError("empty manifest");
    return m;
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << manifest_to_csv(m);
    if (!out) throw IoError("failed writing manifest " + path.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return manifest_from_csv(ss.str());
}

// ---------------------------------------------------------------- directory scan

/// Lists the PNG files under root/COVID and root/Normal, sorted.
inline std::vector<LabeledPath> scan_dataset_dir(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::vector<LabeledPath> out;
    for (Label label : kLabels) {
        const fs::path dir = root / std::string(label_name(label));
        std::error_code ec;
        if (!fs::is_directory(dir, ec)) throw DataError("missing class directory " + dir.string());
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            std::string ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
            if (ext == ".png") files.push_back(entry.path().lexically_normal().generic_string());
        }
        if (files.empty()) throw DataError("no PNG images in " + dir.string());
        std::sort(files.begin(), files.end());
        for (auto& f : files) out.push_back({std::move(f), label});
    }
    return out;
}

} // namespace xcnn
