#include "retriage/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "retriage/error.hpp"

namespace retriage::dataset {

std::string source_name(Source s) {
    switch (s) {
        case Source::APTOS: return "APTOS";
        case Source::IDRID: return "IDRID";
        case Source::SYNTH: return "SYNTH";
    }
    return "?";
}

Source source_from_name(const std::string& name) {
    if (name == "APTOS") return Source::APTOS;
    if (name == "IDRID") return Source::IDRID;
    if (name == "SYNTH") return Source::SYNTH;
    throw ValidationError("unknown dataset source: " + name);
}

void Manifest::push(Sample s) {
    counts[static_cast<std::size_t>(s.grade)] += 1;
    samples.push_back(std::move(s));
}

bool Manifest::counts_consistent() const {
    std::array<std::int64_t, kNumGrades> tally{};
    for (const auto& s : samples) tally[static_cast<std::size_t>(s.grade)] += 1;
    return tally == counts;
}

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    std::size_t e = s.find_last_not_of(" \t");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

}  // namespace

Manifest load_manifest(const std::string& csv_text, Source source, const CsvSchema& schema) {
    std::istringstream in(csv_text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty manifest: missing header row");
    // Strip a UTF-8 BOM if one leads the header.
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
        static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
        line.erase(0, 3);

    const auto header = split_csv_row(line);
    int id_col = -1, grade_col = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string name = trim(header[i]);
        if (name == schema.id_column) id_col = static_cast<int>(i);
        if (name == schema.grade_column) grade_col = static_cast<int>(i);
    }
    if (id_col < 0)
        throw ParseError("manifest header lacks id column '" + schema.id_column + "'");
    if (grade_col < 0)
        throw ParseError("manifest header lacks grade column '" + schema.grade_column + "'");

    Manifest m;
    std::set<std::string> seen;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_row(line);
        if (static_cast<int>(fields.size()) <= std::max(id_col, grade_col))
            throw ParseError("row has " + std::to_string(fields.size()) + " fields, need at least " +
                                 std::to_string(std::max(id_col, grade_col) + 1),
                             row);
        const std::string id = trim(fields[static_cast<std::size_t>(id_col)]);
        const std::string grade_text = trim(fields[static_cast<std::size_t>(grade_col)]);
        if (id.empty()) throw ParseError("empty id", row);

        int grade = 0;
        try {
            std::size_t used = 0;
            grade = std::stoi(grade_text, &used);
            if (used != grade_text.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw ParseError("grade '" + grade_text + "' is not an integer", row);
        }
        if (grade < 0 || grade >= kNumGrades)
            throw ValidationError("grade " + std::to_string(grade) + " outside 0..4 at row " +
                                  std::to_string(row));
        if (!seen.insert(id).second)
            throw CollisionError("duplicate id '" + id + "' at row " + std::to_string(row));

        Sample s;
        s.id = id;
        s.source = source;
        s.grade = grade;
        m.push(std::move(s));
    }
    return m;
}

Manifest load_manifest_file(const std::string& path, Source source, const CsvSchema& schema) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open manifest: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return load_manifest(ss.str(), source, schema);
}

Manifest merge(const Manifest& a, const Manifest& b) {
    Manifest out;
    std::set<std::pair<int, std::string>> seen;
    auto absorb = [&](const Manifest& m) {
        for (const auto& s : m.samples) {
            if (!seen.insert({static_cast<int>(s.source), s.id}).second)
                throw CollisionError("duplicate sample (" + source_name(s.source) + ", " + s.id +
                                     ") while merging manifests");
            out.push(s);
        }
    };
    absorb(a);
    absorb(b);
    return out;
}

namespace {

void fill_disk(RawImage& img, double cx, double cy, double r, std::uint8_t cr, std::uint8_t cg,
               std::uint8_t cb) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + r)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + r)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r * r) {
                img.at(y, x, 0) = cr;
                img.at(y, x, 1) = cg;
                img.at(y, x, 2) = cb;
            }
        }
}

}  // namespace

RawImage synth_image(int grade, const SynthParams& params, Rng& rng) {
    if (grade < 0 || grade >= kNumGrades)
        throw ValidationError("synth_image: grade " + std::to_string(grade) + " outside 0..4");
    if (params.image_side < 32)
        throw ValidationError("synth_image: image_side must be >= 32");
    if (params.lesions_per_grade < 1)
        throw ValidationError("synth_image: lesions_per_grade must be >= 1");

    const int side = params.image_side;
    RawImage img(side, side);

    // Dark background with faint noise, clearly below the retina mask threshold.
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const std::uint8_t v = static_cast<std::uint8_t>(rng.next_below(5));
            img.at(y, x, 0) = v;
            img.at(y, x, 1) = v;
            img.at(y, x, 2) = static_cast<std::uint8_t>(v + rng.next_below(3));
        }

    // Retina disk: warm tone, brighter toward the center. Peak luma stays
    // well under the lesion detection level.
    const double cx = side / 2.0 + rng.uniform(-side * 0.02, side * 0.02);
    const double cy = side / 2.0 + rng.uniform(-side * 0.02, side * 0.02);
    const double radius = side * rng.uniform(0.40, 0.44);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d <= radius) {
                const double falloff = 1.0 - 0.35 * (d / radius);
                img.at(y, x, 0) = static_cast<std::uint8_t>(std::lround(175 * falloff));
                img.at(y, x, 1) = static_cast<std::uint8_t>(std::lround(105 * falloff));
                img.at(y, x, 2) = static_cast<std::uint8_t>(std::lround(55 * falloff));
            }
        }

    // Vessels: momentum random walks drawing dark strokes inside the disk.
    for (int v = 0; v < params.vessel_walks; ++v) {
        double px = cx + rng.uniform(-radius * 0.2, radius * 0.2);
        double py = cy + rng.uniform(-radius * 0.2, radius * 0.2);
        double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const int steps = static_cast<int>(radius * 1.6);
        for (int s = 0; s < steps; ++s) {
            ang += rng.uniform(-0.35, 0.35);
            px += std::cos(ang);
            py += std::sin(ang);
            const double dx = px - cx, dy = py - cy;
            if (dx * dx + dy * dy > radius * radius * 0.92 * 0.92) break;
            const int ix = static_cast<int>(std::lround(px));
            const int iy = static_cast<int>(std::lround(py));
            if (!img.in_bounds(iy, ix)) break;
            img.at(iy, ix, 0) = 95;
            img.at(iy, ix, 1) = 35;
            img.at(iy, ix, 2) = 30;
        }
    }

    // Lesions: small bright blobs, pairwise separated so a connected-
    // component pass can count them exactly.
    const int n_lesions = grade * params.lesions_per_grade;
    const double lesion_r = std::max(1.2, side / 42.0);
    const double placement_r = radius * 0.78;
    std::vector<std::pair<double, double>> placed;
    for (int i = 0; i < n_lesions; ++i) {
        bool ok = false;
        for (int attempt = 0; attempt < 400 && !ok; ++attempt) {
            const double a = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            const double rr = placement_r * std::sqrt(rng.next_double());
            const double lx = cx + rr * std::cos(a);
            const double ly = cy + rr * std::sin(a);
            ok = true;
            for (const auto& [qx, qy] : placed) {
                const double dx = lx - qx, dy = ly - qy;
                if (dx * dx + dy * dy < (4.0 * lesion_r + 2.0) * (4.0 * lesion_r + 2.0)) {
                    ok = false;
                    break;
                }
            }
            if (ok) placed.emplace_back(lx, ly);
        }
        if (!ok)
            throw GenerationError("synth_image: could not place " + std::to_string(n_lesions) +
                                  " lesions in a " + std::to_string(side) + "px image");
    }
    for (const auto& [lx, ly] : placed)
        fill_disk(img, lx, ly, lesion_r, 250, 240, 195);

    return img;
}

Manifest synth_manifest(int per_grade, const SynthParams& params) {
    if (per_grade < 1) throw ValidationError("synth_manifest: per_grade must be >= 1");
    Manifest m;
    Rng base(params.seed);
    for (int g = 0; g < kNumGrades; ++g) {
        for (int i = 0; i < per_grade; ++i) {
            Rng sample_rng = base.derive(static_cast<std::uint64_t>(g) * 1000003u + i);
            Sample s;
            s.grade = g;
            s.source = Source::SYNTH;
            std::ostringstream id;
            id << "synth_g" << g << "_" << i;
            s.id = id.str();
            s.pixels = synth_image(g, params, sample_rng);
            m.push(std::move(s));
        }
    }
    return m;
}

FoldAssignment stratified_folds(const std::vector<int>& labels, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("stratified_folds: k must be >= 2");
    if (labels.empty()) throw ValidationError("stratified_folds: empty label sequence");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    FoldAssignment out;
    out.fold_of.assign(labels.size(), -1);

    Rng rng(seed);
    for (auto& [cls, idx] : by_class) {
        if (static_cast<int>(idx.size()) < k)
            out.warnings.push_back("class " + std::to_string(cls) + " has " +
                                   std::to_string(idx.size()) + " samples, fewer than k=" +
                                   std::to_string(k) + "; some folds lack this class");
        // Fisher-Yates with the documented engine, then round-robin folds.
        for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
            const std::size_t j = i + rng.next_below(idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        for (std::size_t i = 0; i < idx.size(); ++i)
            out.fold_of[idx[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    }
    return out;
}

}  // namespace retriage::dataset
