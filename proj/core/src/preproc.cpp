#include "retriage/preproc.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "retriage/error.hpp"
#include "retriage/rng.hpp"

namespace retriage::preproc {

void PreprocConfig::validate() const {
    if (mask_threshold < 0 || mask_threshold > 255)
        throw ValidationError("preproc: mask_threshold must be in 0..255");
    if (margin_frac < 0.0) throw ValidationError("preproc: margin_frac must be >= 0");
    if (strict_margin_bounds && (margin_frac < 0.05 || margin_frac > 0.10))
        throw ValidationError("preproc: margin_frac outside [0.05, 0.10] with strict bounds set");
    if (sigma_ratio <= 0.0) throw ValidationError("preproc: sigma_ratio must be > 0");
    if (clahe_grid < 1) throw ValidationError("preproc: clahe_grid must be >= 1");
    if (clahe_clip < 1.0) throw ValidationError("preproc: clahe_clip must be >= 1");
    if (target_side < 1) throw ValidationError("preproc: target_side must be >= 1");
    for (double s : channel_std)
        if (s <= 0.0) throw ValidationError("preproc: channel_std must be > 0 elementwise");
}

std::vector<std::uint8_t> retina_mask(const RawImage& img, int threshold) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(img.width) * img.height, 0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const int g = luma601(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
            mask[static_cast<std::size_t>(y) * img.width + x] = g > threshold ? 1 : 0;
        }
    return mask;
}

std::vector<Point> largest_component(const std::vector<std::uint8_t>& mask, int width,
                                     int height) {
    std::vector<std::uint8_t> visited(mask.size(), 0);
    std::vector<Point> best;
    // Row-major scan: the first pixel of each component is its
    // (min-row, min-col) seed, so keeping strictly larger components
    // implements the tie-break for free.
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t at = static_cast<std::size_t>(y) * width + x;
            if (!mask[at] || visited[at]) continue;
            std::vector<Point> comp;
            std::deque<Point> queue{{x, y}};
            visited[at] = 1;
            while (!queue.empty()) {
                const Point p = queue.front();
                queue.pop_front();
                comp.push_back(p);
                constexpr int dx[4] = {0, 0, -1, 1};
                constexpr int dy[4] = {-1, 1, 0, 0};
                for (int d = 0; d < 4; ++d) {
                    const int nx = p.x + dx[d], ny = p.y + dy[d];
                    if (nx < 0 || nx >= width || ny < 0 || ny >= height) continue;
                    const std::size_t nat = static_cast<std::size_t>(ny) * width + nx;
                    if (mask[nat] && !visited[nat]) {
                        visited[nat] = 1;
                        queue.push_back({nx, ny});
                    }
                }
            }
            if (comp.size() > best.size()) best = std::move(comp);
        }
    }
    if (best.empty()) throw GeometryError("no retina found: empty mask");
    return best;
}

namespace {

struct DPoint {
    double x, y;
};

bool in_circle(const Circle& c, const DPoint& p, double eps = 1e-7) {
    const double dx = p.x - c.cx, dy = p.y - c.cy;
    return std::sqrt(dx * dx + dy * dy) <= c.r + eps;
}

Circle circle_two(const DPoint& a, const DPoint& b) {
    const double cx = 0.5 * (a.x + b.x), cy = 0.5 * (a.y + b.y);
    const double dx = a.x - cx, dy = a.y - cy;
    return {cx, cy, std::sqrt(dx * dx + dy * dy)};
}

// Circumcircle of three points; falls back to the best two-point circle
// when they are (near-)collinear.
Circle circle_three(const DPoint& a, const DPoint& b, const DPoint& c) {
    const double d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    if (std::abs(d) < 1e-12) {
        Circle best = circle_two(a, b);
        const Circle bc = circle_two(b, c);
        if (bc.r > best.r) best = bc;
        const Circle ac = circle_two(a, c);
        if (ac.r > best.r) best = ac;
        return best;
    }
    const double a2 = a.x * a.x + a.y * a.y;
    const double b2 = b.x * b.x + b.y * b.y;
    const double c2 = c.x * c.x + c.y * c.y;
    const double ux = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
    const double uy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
    const double dx = a.x - ux, dy = a.y - uy;
    return {ux, uy, std::sqrt(dx * dx + dy * dy)};
}

Circle trivial_circle(const std::vector<DPoint>& r) {
    switch (r.size()) {
        case 0: return {0, 0, 0};
        case 1: return {r[0].x, r[0].y, 0};
        case 2: return circle_two(r[0], r[1]);
        default: {
            // Prefer a two-point circle when one already covers the third.
            for (int i = 0; i < 3; ++i)
                for (int j = i + 1; j < 3; ++j) {
                    const Circle c = circle_two(r[static_cast<std::size_t>(i)],
                                                r[static_cast<std::size_t>(j)]);
                    if (in_circle(c, r[static_cast<std::size_t>(3 - i - j)])) return c;
                }
            return circle_three(r[0], r[1], r[2]);
        }
    }
}

Circle welzl_recurse(std::vector<DPoint>& pts, std::size_t n, std::vector<DPoint>& boundary) {
    if (n == 0 || boundary.size() == 3) return trivial_circle(boundary);
    const DPoint p = pts[n - 1];
    Circle c = welzl_recurse(pts, n - 1, boundary);
    if (in_circle(c, p)) return c;
    boundary.push_back(p);
    c = welzl_recurse(pts, n - 1, boundary);
    boundary.pop_back();
    return c;
}

Circle welzl(std::vector<DPoint> pts) {
    Rng rng(0x5eed5eedULL);  // fixed shuffle seed keeps the op deterministic
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const std::size_t j = i + rng.next_below(pts.size() - i);
        std::swap(pts[i], pts[j]);
    }
    std::vector<DPoint> boundary;
    return welzl_recurse(pts, pts.size(), boundary);
}

// Andrew's monotone chain; shrinks the Welzl input to hull vertices.
std::vector<DPoint> convex_hull(std::vector<DPoint> pts) {
    std::sort(pts.begin(), pts.end(), [](const DPoint& a, const DPoint& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const DPoint& a, const DPoint& b) {
                              return a.x == b.x && a.y == b.y;
                          }),
              pts.end());
    if (pts.size() <= 2) return pts;
    auto cross = [](const DPoint& o, const DPoint& a, const DPoint& b) {
        return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    };
    std::vector<DPoint> hull(2 * pts.size());
    std::size_t k = 0;
    for (std::size_t p = 0; p < pts.size(); ++p) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[p]) <= 0) --k;
        hull[k++] = pts[p];
    }
    const std::size_t lower = k + 1;
    for (std::size_t p = pts.size() - 1; p-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[p]) <= 0) --k;
        hull[k++] = pts[p];
    }
    hull.resize(k - 1);
    return hull;
}

}  // namespace

Circle min_enclosing_circle(const std::vector<Point>& points) {
    if (points.empty()) throw GeometryError("min_enclosing_circle: empty point set");
    std::vector<DPoint> pts;
    pts.reserve(points.size());
    for (const Point& p : points) pts.push_back({static_cast<double>(p.x), static_cast<double>(p.y)});
    if (pts.size() > 16) pts = convex_hull(std::move(pts));
    return welzl(std::move(pts));
}

RawImage circular_crop(const RawImage& img, const Circle& circle, double margin_frac) {
    if (circle.r <= 0.0)
        throw GeometryError("circular_crop: degenerate circle with r = " +
                            std::to_string(circle.r));
    const double raw_side = 2.0 * circle.r * (1.0 + margin_frac);
    const int side = 2 * static_cast<int>(std::lround(raw_side / 2.0));
    if (side < 1) throw GeometryError("circular_crop: crop side rounds to zero");

    RawImage out(side, side);
    const int cy = static_cast<int>(std::lround(circle.cy));
    const int cx = static_cast<int>(std::lround(circle.cx));
    const int top = cy - side / 2;
    const int left = cx - side / 2;
    const double oc = (side - 1) / 2.0;     // output center, pixel-center convention
    const double expanded_r = side / 2.0;   // retina plus margin
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double dx = x - oc, dy = y - oc;
            if (dx * dx + dy * dy > expanded_r * expanded_r) continue;  // outside circle: stay 0
            const int sy = top + y, sx = left + x;
            if (!img.in_bounds(sy, sx)) continue;  // outside source: stay 0
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    return out;
}

ImageF gaussian_blur(const ImageF& img, double sigma) {
    if (sigma <= 0.0) throw ValidationError("gaussian_blur: sigma must be > 0");
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : kernel) v /= sum;

    // Symmetric reflection: index -1 maps to 0, index n maps to n-1.
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - 1 - i;
        }
        return i;
    };

    ImageF tmp(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[static_cast<std::size_t>(k + radius)] *
                           img.at(y, reflect(x + k, img.width), c);
                tmp.at(y, x, c) = static_cast<float>(acc);
            }
    ImageF out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel[static_cast<std::size_t>(k + radius)] *
                           tmp.at(reflect(y + k, img.height), x, c);
                out.at(y, x, c) = static_cast<float>(acc);
            }
    return out;
}

RawImage ben_graham(const RawImage& img, const PreprocConfig& cfg) {
    const int side = std::min(img.width, img.height);
    const double sigma = std::max(static_cast<double>(side) / cfg.sigma_ratio, 1e-6);
    const ImageF src = to_float(img);
    const ImageF bg = gaussian_blur(src, sigma);
    RawImage out(img.width, img.height);
    for (std::size_t i = 0; i < src.data.size(); ++i) {
        const double v = cfg.bg_alpha * (static_cast<double>(src.data[i]) - bg.data[i]) + cfg.bg_bias;
        out.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
    return out;
}

namespace {

// Clip-limited histogram -> 256-entry mapping via the tile's CDF.
std::array<std::uint8_t, 256> tile_mapping(const std::vector<double>& hist, double clip_mult) {
    double total = 0.0;
    for (double h : hist) total += h;
    std::vector<double> clipped(hist);
    const double limit = clip_mult * total / 256.0;
    double excess = 0.0;
    for (double& h : clipped) {
        if (h > limit) {
            excess += h - limit;
            h = limit;
        }
    }
    const double redist = excess / 256.0;
    for (double& h : clipped) h += redist;

    std::array<std::uint8_t, 256> map{};
    double cdf = 0.0;
    for (int v = 0; v < 256; ++v) {
        cdf += clipped[static_cast<std::size_t>(v)];
        map[static_cast<std::size_t>(v)] =
            static_cast<std::uint8_t>(std::lround(255.0 * cdf / total));
    }
    return map;
}

}  // namespace

std::vector<std::array<std::uint8_t, 256>> clahe_mappings(const RawImage& img, int grid,
                                                          double clip) {
    if (grid < 1) throw ValidationError("clahe: grid must be >= 1");
    if (clip < 1.0) throw ValidationError("clahe: clip must be >= 1");
    int g = grid;
    if (img.width < grid || img.height < grid) g = 1;  // single-tile fallback

    std::vector<std::array<std::uint8_t, 256>> maps;
    maps.reserve(static_cast<std::size_t>(g) * g);
    for (int ty = 0; ty < g; ++ty)
        for (int tx = 0; tx < g; ++tx) {
            const int y0 = ty * img.height / g, y1 = (ty + 1) * img.height / g;
            const int x0 = tx * img.width / g, x1 = (tx + 1) * img.width / g;
            std::vector<double> hist(256, 0.0);
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) hist[img.at(y, x, 1)] += 1.0;
            maps.push_back(tile_mapping(hist, clip));
        }
    return maps;
}

RawImage clahe_green(const RawImage& img, int grid, double clip) {
    const auto maps = clahe_mappings(img, grid, clip);
    const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(maps.size()))));

    RawImage out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const std::uint8_t v = img.at(y, x, 1);
            // Fractional tile coordinates relative to tile centers.
            const double tyf = (static_cast<double>(y) + 0.5) * g / img.height - 0.5;
            const double txf = (static_cast<double>(x) + 0.5) * g / img.width - 0.5;
            const int ty0 = std::clamp(static_cast<int>(std::floor(tyf)), 0, g - 1);
            const int tx0 = std::clamp(static_cast<int>(std::floor(txf)), 0, g - 1);
            const int ty1 = std::min(ty0 + 1, g - 1);
            const int tx1 = std::min(tx0 + 1, g - 1);
            const double fy = std::clamp(tyf - ty0, 0.0, 1.0);
            const double fx = std::clamp(txf - tx0, 0.0, 1.0);
            const double m00 = maps[static_cast<std::size_t>(ty0) * g + tx0][v];
            const double m01 = maps[static_cast<std::size_t>(ty0) * g + tx1][v];
            const double m10 = maps[static_cast<std::size_t>(ty1) * g + tx0][v];
            const double m11 = maps[static_cast<std::size_t>(ty1) * g + tx1][v];
            const double blended = (1 - fy) * ((1 - fx) * m00 + fx * m01) +
                                   fy * ((1 - fx) * m10 + fx * m11);
            out.at(y, x, 1) = static_cast<std::uint8_t>(std::lround(std::clamp(blended, 0.0, 255.0)));
        }
    return out;
}

RawImage resize_bilinear(const RawImage& img, int side) {
    if (side < 1) throw ValidationError("resize_bilinear: side must be >= 1");
    RawImage out(side, side);
    const double sy = static_cast<double>(img.height) / side;
    const double sx = static_cast<double>(img.width) / side;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double fy = (y + 0.5) * sy - 0.5;
            const double fx = (x + 0.5) * sx - 0.5;
            const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.height - 1);
            const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.width - 1);
            const int y1 = std::min(y0 + 1, img.height - 1);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wy = std::clamp(fy - y0, 0.0, 1.0);
            const double wx = std::clamp(fx - x0, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                const double v = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                                 wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    return out;
}

autodiff::Tensor to_tensor_normalized(const RawImage& img, const std::array<double, 3>& mean,
                                      const std::array<double, 3>& std_dev) {
    for (double s : std_dev)
        if (s <= 0.0) throw ValidationError("to_tensor_normalized: std must be > 0 elementwise");
    autodiff::Tensor t({3, img.height, img.width});
    auto out = t.data();
    std::size_t i = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                out[i++] = static_cast<float>(
                    (static_cast<double>(img.at(y, x, c)) / 255.0 - mean[static_cast<std::size_t>(c)]) /
                    std_dev[static_cast<std::size_t>(c)]);
    return t;
}

namespace {

template <typename F>
auto run_stage(const char* stage, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(std::string("preprocess stage '") + stage + "': " + e.what());
    }
}

}  // namespace

RawImage preprocess_to_image(const RawImage& img, const PreprocConfig& cfg) {
    cfg.validate();
    const auto mask = run_stage("retina_mask", [&] { return retina_mask(img, cfg.mask_threshold); });
    const auto comp = run_stage("largest_component",
                                [&] { return largest_component(mask, img.width, img.height); });
    const auto circle = run_stage("min_enclosing_circle", [&] { return min_enclosing_circle(comp); });
    RawImage cropped =
        run_stage("circular_crop", [&] { return circular_crop(img, circle, cfg.margin_frac); });
    RawImage normalized = run_stage("ben_graham", [&] { return ben_graham(cropped, cfg); });
    if (cfg.clahe_enabled)
        normalized = run_stage("clahe_green",
                               [&] { return clahe_green(normalized, cfg.clahe_grid, cfg.clahe_clip); });
    return run_stage("resize_bilinear", [&] { return resize_bilinear(normalized, cfg.target_side); });
}

autodiff::Tensor preprocess(const RawImage& img, const PreprocConfig& cfg) {
    const RawImage prepped = preprocess_to_image(img, cfg);
    return run_stage("to_tensor_normalized",
                     [&] { return to_tensor_normalized(prepped, cfg.channel_mean, cfg.channel_std); });
}

StageDump preprocess_stages(const RawImage& img, const PreprocConfig& cfg) {
    cfg.validate();
    StageDump dump;
    dump.stages.emplace_back("input", img);
    const auto mask = retina_mask(img, cfg.mask_threshold);
    RawImage mask_img(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (mask[static_cast<std::size_t>(y) * img.width + x])
                for (int c = 0; c < 3; ++c) mask_img.at(y, x, c) = 255;
    dump.stages.emplace_back("mask", mask_img);
    const auto comp = largest_component(mask, img.width, img.height);
    const auto circle = min_enclosing_circle(comp);
    RawImage cropped = circular_crop(img, circle, cfg.margin_frac);
    dump.stages.emplace_back("crop", cropped);
    RawImage normalized = ben_graham(cropped, cfg);
    dump.stages.emplace_back("background", normalized);
    if (cfg.clahe_enabled) {
        normalized = clahe_green(normalized, cfg.clahe_grid, cfg.clahe_clip);
        dump.stages.emplace_back("clahe", normalized);
    }
    dump.stages.emplace_back("resize", resize_bilinear(normalized, cfg.target_side));
    return dump;
}

}  // namespace retriage::preproc
