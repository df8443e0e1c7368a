#include "calli/vector_font.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "calli/common.hpp"

namespace calli {

using json = nlohmann::json;

// --- serialization ----------------------------------------------------------

std::string VectorFont::to_json() const {
    json j;
    j["format"] = "calli-vector-font";
    j["version"] = 1;
    j["name"] = name;
    j["units"] = units;
    j["holdout"] = holdout;
    j["style"] = {{"width", style.width},
                  {"taper", style.taper},
                  {"slant", style.slant},
                  {"wobble", style.wobble}};
    json glyphs_j = json::object();
    for (const auto& [cp, glyph] : glyphs) {
        json strokes_j = json::array();
        for (const auto& s : glyph.strokes) {
            json pts = json::array();
            for (const auto& p : s.points) pts.push_back({p[0], p[1]});
            strokes_j.push_back({{"cls", s.cls}, {"pts", pts}, {"w", s.width}});
        }
        glyphs_j[utf8_encode(cp)] = strokes_j;
    }
    j["glyphs"] = glyphs_j;
    return j.dump(1, '\t') + "\n";
}

VectorFont VectorFont::from_json(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(origin + ": " + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "calli-vector-font")
            throw ParseError(origin + ": not a calli vector font");
        if (j.at("version").get<int>() != 1)
            throw VersionError(origin + ": unsupported font version");
        VectorFont f;
        f.name = j.at("name").get<std::string>();
        f.units = j.at("units").get<double>();
        f.holdout = j.value("holdout", false);
        const auto& st = j.at("style");
        f.style.width = st.at("width").get<double>();
        f.style.taper = st.at("taper").get<double>();
        f.style.slant = st.at("slant").get<double>();
        f.style.wobble = st.at("wobble").get<double>();
        if (f.units <= 0 || f.style.width <= 0)
            throw ParseError(origin + ": units and stroke width must be positive");
        for (const auto& [key, strokes_j] : j.at("glyphs").items()) {
            const std::u32string cps = utf8_decode(key);
            if (cps.size() != 1) throw ParseError(origin + ": glyph key must be one character");
            FontGlyph g;
            for (const auto& s : strokes_j) {
                FontStroke stroke;
                stroke.cls = s.at("cls").get<int>();
                stroke.width = s.value("w", 1.0);
                for (const auto& p : s.at("pts"))
                    stroke.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
                if (stroke.points.size() < 2)
                    throw ParseError(origin + ": stroke needs at least two points");
                g.strokes.push_back(std::move(stroke));
            }
            if (g.strokes.empty()) throw ParseError(origin + ": glyph with no strokes");
            f.glyphs[cps[0]] = std::move(g);
        }
        return f;
    } catch (const json::exception& e) {
        throw ParseError(origin + ": " + e.what());
    }
}

VectorFont VectorFont::load(const std::filesystem::path& path) {
    return from_json(read_text_file(path), path.string());
}

void VectorFont::save(const std::filesystem::path& path) const {
    atomic_write_file(path, to_json());
}

// --- rasterizer --------------------------------------------------------------

namespace {

struct BrushPoint {
    double x, y, r;  // center and radius in canvas pixels
};

// Distance from p to segment ab, and interpolation parameter along it.
double segment_distance(double px, double py, const BrushPoint& a, const BrushPoint& b,
                        double& t_out) {
    const double abx = b.x - a.x, aby = b.y - a.y;
    const double len2 = abx * abx + aby * aby;
    double t = 0.0;
    if (len2 > 0) t = std::clamp(((px - a.x) * abx + (py - a.y) * aby) / len2, 0.0, 1.0);
    const double dx = px - (a.x + t * abx), dy = py - (a.y + t * aby);
    t_out = t;
    return std::sqrt(dx * dx + dy * dy);
}

// Subdivided, styled polylines for one glyph, in font units.
std::vector<std::vector<BrushPoint>> styled_strokes(const VectorFont& font, const FontGlyph& glyph) {
    std::vector<std::vector<BrushPoint>> out;
    const FontStyle& st = font.style;
    const double mid_y = font.units / 2.0;
    std::size_t stroke_idx = 0;
    for (const auto& stroke : glyph.strokes) {
        // cumulative length for the taper/wobble parameter
        double total = 0;
        std::vector<double> seglen(stroke.points.size() - 1, 0.0);
        for (std::size_t i = 0; i + 1 < stroke.points.size(); ++i) {
            const double dx = stroke.points[i + 1][0] - stroke.points[i][0];
            const double dy = stroke.points[i + 1][1] - stroke.points[i][1];
            seglen[i] = std::hypot(dx, dy);
            total += seglen[i];
        }
        if (total <= 0) total = 1;

        std::vector<BrushPoint> poly;
        double walked = 0;
        const double phase = 2.399963 * static_cast<double>(stroke_idx + 1);
        for (std::size_t i = 0; i + 1 < stroke.points.size(); ++i) {
            const int steps = std::max(2, static_cast<int>(std::ceil(seglen[i] / (font.units / 48.0))));
            for (int k = (i == 0 ? 0 : 1); k <= steps; ++k) {
                const double u = static_cast<double>(k) / steps;
                double x = stroke.points[i][0] + u * (stroke.points[i + 1][0] - stroke.points[i][0]);
                double y = stroke.points[i][1] + u * (stroke.points[i + 1][1] - stroke.points[i][1]);
                const double t = (walked + u * seglen[i]) / total;
                if (st.wobble > 0) {
                    // perpendicular ripple; phase fixed per stroke index
                    double nx = -(stroke.points[i + 1][1] - stroke.points[i][1]);
                    double ny = stroke.points[i + 1][0] - stroke.points[i][0];
                    const double nlen = std::hypot(nx, ny);
                    if (nlen > 0) {
                        const double a = st.wobble * std::sin(2.0 * M_PI * 1.5 * t + phase);
                        x += a * nx / nlen;
                        y += a * ny / nlen;
                    }
                }
                if (st.slant != 0) x += st.slant * (mid_y - y);
                const double w = st.width * stroke.width * (1.0 - st.taper * t);
                poly.push_back({x, y, std::max(0.5, w / 2.0)});
            }
            walked += seglen[i];
        }
        out.push_back(std::move(poly));
        ++stroke_idx;
    }
    return out;
}

}  // namespace

Image rasterize_glyph(const VectorFont& font, char32_t label, int resolution) {
    if (resolution <= 0) throw ValueError("resolution must be positive");
    const auto it = font.glyphs.find(label);
    if (it == font.glyphs.end())
        throw UnknownLabelError("font '" + font.name + "' has no glyph for " + utf8_encode(label));

    auto strokes = styled_strokes(font, it->second);

    // glyph bounds including brush radius
    double min_x = std::numeric_limits<double>::max(), min_y = min_x;
    double max_x = std::numeric_limits<double>::lowest(), max_y = max_x;
    for (const auto& poly : strokes)
        for (const auto& p : poly) {
            min_x = std::min(min_x, p.x - p.r);
            min_y = std::min(min_y, p.y - p.r);
            max_x = std::max(max_x, p.x + p.r);
            max_y = std::max(max_y, p.y + p.r);
        }

    // center the bounding box with a 10% margin on the larger dimension
    const double margin = 0.1 * resolution;
    const double avail = resolution - 2.0 * margin;
    const double span = std::max(std::max(max_x - min_x, max_y - min_y), 1e-9);
    const double scale = avail / span;
    const double off_x = (resolution - (max_x - min_x) * scale) / 2.0 - min_x * scale;
    const double off_y = (resolution - (max_y - min_y) * scale) / 2.0 - min_y * scale;

    for (auto& poly : strokes)
        for (auto& p : poly) {
            p.x = p.x * scale + off_x;
            p.y = p.y * scale + off_y;
            p.r *= scale;
        }

    Image img(resolution, resolution, 0.0);
    const double aa = 1.0;  // anti-alias ramp in pixels
    for (const auto& poly : strokes) {
        for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
            const BrushPoint& a = poly[i];
            const BrushPoint& b = poly[i + 1];
            const double rmax = std::max(a.r, b.r);
            const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - rmax - aa)));
            const int x1 = std::min(resolution - 1,
                                    static_cast<int>(std::ceil(std::max(a.x, b.x) + rmax + aa)));
            const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - rmax - aa)));
            const int y1 = std::min(resolution - 1,
                                    static_cast<int>(std::ceil(std::max(a.y, b.y) + rmax + aa)));
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    double t;
                    const double d =
                        segment_distance(x + 0.5, y + 0.5, a, b, t);
                    const double r = a.r + t * (b.r - a.r);
                    const double cov = std::clamp(0.5 + (r - d) / aa, 0.0, 1.0);
                    if (cov > 0) {
                        double& px = img.at(x, y);
                        px = std::max(px, cov);
                    }
                }
            }
        }
    }
    return img;
}

// --- synthetic faces ---------------------------------------------------------

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

double unit_hash(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return static_cast<double>(mix64(seed ^ mix64(a ^ mix64(b))) >> 11) * 0x1.0p-53;
}

using Pt = std::array<double, 2>;

FontStroke make_stroke(int cls, std::initializer_list<Pt> pts, double w = 1.0) {
    FontStroke s;
    s.cls = cls;
    s.points.assign(pts);
    s.width = w;
    return s;
}

// Hand-drawn layouts for common characters, on the unit square (y down).
const std::map<char32_t, FontGlyph>& handmade_layouts() {
    static const std::map<char32_t, FontGlyph> table = [] {
        std::map<char32_t, FontGlyph> m;
        auto put = [&m](const char* utf8, std::vector<FontStroke> strokes) {
            const std::u32string cp = utf8_decode(utf8);
            m[cp[0]] = FontGlyph{std::move(strokes)};
        };
        put("一", {make_stroke(1, {{0.08, 0.50}, {0.92, 0.50}})});
        put("二", {make_stroke(1, {{0.15, 0.33}, {0.85, 0.33}}),
                   make_stroke(1, {{0.08, 0.70}, {0.92, 0.70}})});
        put("三", {make_stroke(1, {{0.14, 0.22}, {0.86, 0.22}}),
                   make_stroke(1, {{0.20, 0.50}, {0.80, 0.50}}),
                   make_stroke(1, {{0.08, 0.80}, {0.92, 0.80}})});
        put("十", {make_stroke(1, {{0.08, 0.50}, {0.92, 0.50}}),
                   make_stroke(2, {{0.50, 0.08}, {0.50, 0.92}})});
        put("口", {make_stroke(2, {{0.20, 0.15}, {0.20, 0.85}}),
                   make_stroke(5, {{0.20, 0.15}, {0.80, 0.15}, {0.80, 0.85}}),
                   make_stroke(1, {{0.20, 0.85}, {0.80, 0.85}})});
        put("日", {make_stroke(2, {{0.26, 0.08}, {0.26, 0.92}}),
                   make_stroke(5, {{0.26, 0.08}, {0.74, 0.08}, {0.74, 0.92}}),
                   make_stroke(1, {{0.26, 0.50}, {0.74, 0.50}}),
                   make_stroke(1, {{0.26, 0.92}, {0.74, 0.92}})});
        put("目", {make_stroke(2, {{0.28, 0.06}, {0.28, 0.94}}),
                   make_stroke(5, {{0.28, 0.06}, {0.72, 0.06}, {0.72, 0.94}}),
                   make_stroke(1, {{0.28, 0.36}, {0.72, 0.36}}),
                   make_stroke(1, {{0.28, 0.64}, {0.72, 0.64}}),
                   make_stroke(1, {{0.28, 0.94}, {0.72, 0.94}})});
        put("田", {make_stroke(2, {{0.15, 0.15}, {0.15, 0.85}}),
                   make_stroke(5, {{0.15, 0.15}, {0.85, 0.15}, {0.85, 0.85}}),
                   make_stroke(2, {{0.50, 0.15}, {0.50, 0.85}}),
                   make_stroke(1, {{0.15, 0.50}, {0.85, 0.50}}),
                   make_stroke(1, {{0.15, 0.85}, {0.85, 0.85}})});
        put("中", {make_stroke(2, {{0.20, 0.28}, {0.20, 0.66}}),
                   make_stroke(5, {{0.20, 0.28}, {0.80, 0.28}, {0.80, 0.66}}),
                   make_stroke(1, {{0.20, 0.66}, {0.80, 0.66}}),
                   make_stroke(2, {{0.50, 0.06}, {0.50, 0.94}})});
        put("人", {make_stroke(3, {{0.52, 0.08}, {0.44, 0.40}, {0.18, 0.90}}),
                   make_stroke(4, {{0.50, 0.36}, {0.64, 0.60}, {0.84, 0.90}})});
        put("大", {make_stroke(1, {{0.10, 0.40}, {0.90, 0.40}}),
                   make_stroke(3, {{0.50, 0.08}, {0.42, 0.45}, {0.15, 0.92}}),
                   make_stroke(4, {{0.52, 0.44}, {0.66, 0.66}, {0.86, 0.92}})});
        put("天", {make_stroke(1, {{0.16, 0.18}, {0.84, 0.18}}),
                   make_stroke(1, {{0.08, 0.45}, {0.92, 0.45}}),
                   make_stroke(3, {{0.50, 0.18}, {0.42, 0.55}, {0.14, 0.92}}),
                   make_stroke(4, {{0.52, 0.50}, {0.66, 0.70}, {0.87, 0.92}})});
        put("木", {make_stroke(1, {{0.10, 0.34}, {0.90, 0.34}}),
                   make_stroke(2, {{0.50, 0.06}, {0.50, 0.94}}),
                   make_stroke(3, {{0.48, 0.40}, {0.30, 0.62}, {0.12, 0.80}}),
                   make_stroke(4, {{0.52, 0.40}, {0.70, 0.62}, {0.88, 0.80}})});
        put("小", {make_stroke(2, {{0.50, 0.06}, {0.50, 0.86}}),
                   make_stroke(3, {{0.32, 0.40}, {0.18, 0.70}}),
                   make_stroke(4, {{0.68, 0.40}, {0.82, 0.70}})});
        put("山", {make_stroke(2, {{0.50, 0.06}, {0.50, 0.72}}),
                   make_stroke(5, {{0.16, 0.30}, {0.16, 0.84}, {0.84, 0.84}}),
                   make_stroke(2, {{0.84, 0.30}, {0.84, 0.84}})});
        put("川", {make_stroke(3, {{0.26, 0.08}, {0.20, 0.50}, {0.10, 0.92}}),
                   make_stroke(2, {{0.50, 0.10}, {0.50, 0.90}}),
                   make_stroke(2, {{0.82, 0.06}, {0.82, 0.94}})});
        put("王", {make_stroke(1, {{0.14, 0.16}, {0.86, 0.16}}),
                   make_stroke(1, {{0.20, 0.50}, {0.80, 0.50}}),
                   make_stroke(2, {{0.50, 0.16}, {0.50, 0.84}}),
                   make_stroke(1, {{0.08, 0.84}, {0.92, 0.84}})});
        put("土", {make_stroke(1, {{0.20, 0.36}, {0.80, 0.36}}),
                   make_stroke(2, {{0.50, 0.08}, {0.50, 0.80}}),
                   make_stroke(1, {{0.08, 0.80}, {0.92, 0.80}})});
        put("工", {make_stroke(1, {{0.14, 0.18}, {0.86, 0.18}}),
                   make_stroke(2, {{0.50, 0.18}, {0.50, 0.82}}),
                   make_stroke(1, {{0.08, 0.82}, {0.92, 0.82}})});
        put("上", {make_stroke(2, {{0.46, 0.08}, {0.46, 0.82}}),
                   make_stroke(1, {{0.46, 0.42}, {0.80, 0.42}}),
                   make_stroke(1, {{0.10, 0.82}, {0.90, 0.82}})});
        put("下", {make_stroke(1, {{0.10, 0.16}, {0.90, 0.16}}),
                   make_stroke(2, {{0.50, 0.16}, {0.50, 0.92}}),
                   make_stroke(4, {{0.54, 0.38}, {0.72, 0.56}})});
        put("千", {make_stroke(3, {{0.68, 0.08}, {0.42, 0.20}, {0.24, 0.26}}),
                   make_stroke(1, {{0.10, 0.42}, {0.90, 0.42}}),
                   make_stroke(2, {{0.50, 0.20}, {0.50, 0.92}})});
        put("月", {make_stroke(3, {{0.30, 0.08}, {0.26, 0.55}, {0.16, 0.90}}),
                   make_stroke(5, {{0.30, 0.08}, {0.76, 0.08}, {0.76, 0.88}}),
                   make_stroke(1, {{0.30, 0.36}, {0.74, 0.36}}),
                   make_stroke(1, {{0.29, 0.62}, {0.75, 0.62}})});
        put("火", {make_stroke(4, {{0.26, 0.22}, {0.36, 0.40}}),
                   make_stroke(3, {{0.74, 0.22}, {0.64, 0.40}}),
                   make_stroke(3, {{0.54, 0.08}, {0.44, 0.55}, {0.16, 0.92}}),
                   make_stroke(4, {{0.50, 0.46}, {0.66, 0.70}, {0.86, 0.92}})});
        put("水", {make_stroke(2, {{0.50, 0.06}, {0.50, 0.94}}),
                   make_stroke(5, {{0.20, 0.26}, {0.42, 0.26}, {0.24, 0.52}}),
                   make_stroke(3, {{0.62, 0.20}, {0.78, 0.34}}),
                   make_stroke(4, {{0.56, 0.48}, {0.70, 0.68}, {0.88, 0.90}})});
        return m;
    }();
    return table;
}

// Stroke geometry for the procedural layout, drawn inside a cell.
FontStroke cell_stroke(int cls, double cx, double cy, double half, double jx, double jy) {
    const double x0 = cx - half + jx, x1 = cx + half + jx;
    const double y0 = cy - half + jy, y1 = cy + half + jy;
    const double xm = (x0 + x1) / 2, ym = (y0 + y1) / 2;
    switch (cls) {
        case 1:
            return make_stroke(1, {{x0, ym}, {x1, ym}});
        case 2:
            return make_stroke(2, {{xm, y0}, {xm, y1}});
        case 3:
            return make_stroke(3, {{x1 - 0.1 * half, y0}, {xm, ym}, {x0, y1}});
        case 4:
            return make_stroke(4, {{x0 + 0.1 * half, y0}, {xm, ym}, {x1, y1}});
        default:
            return make_stroke(5, {{x0, y0 + 0.1 * half}, {x1 - 0.2 * half, y0 + 0.1 * half},
                                   {x1 - 0.2 * half, y1}});
    }
}

// Deterministic arrangement of a stroke sequence on a square grid. Cells
// overlap slightly so neighboring strokes connect the way brush strokes do.
FontGlyph procedural_layout(const StrokeCode& code, std::uint64_t seed) {
    const int n = static_cast<int>(code.stroke_digits.size());
    const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    const double pitch = 1.0 / grid;
    const double half = 0.72 * pitch;  // > pitch/2, so cells overlap

    FontGlyph g;
    for (int i = 0; i < n; ++i) {
        const int cls = code.stroke_digits[static_cast<std::size_t>(i)] - '0';
        const int col = i % grid;
        const int row = i / grid;
        // center the last, possibly short row
        const int row_count = (row == n / grid) ? (n - row * grid) : grid;
        const double row_offset = (grid - row_count) * pitch / 2.0;
        const double cx = row_offset + (col + 0.5) * pitch;
        const double cy = (row + 0.5) * pitch;
        const double jx = (unit_hash(seed, code.character, 2 * i) - 0.5) * 0.30 * pitch;
        const double jy = (unit_hash(seed, code.character, 2 * i + 1) - 0.5) * 0.30 * pitch;
        g.strokes.push_back(cell_stroke(cls, cx, cy, half, jx, jy));
    }
    return g;
}

}  // namespace

VectorFont synthesize_font(const StrokeDictionary& dict, const SynthFontSpec& spec) {
    VectorFont f;
    f.name = spec.name;
    f.units = 256.0;
    f.holdout = spec.holdout;
    f.style = spec.style;
    const auto& handmade = handmade_layouts();
    for (const auto& entry : dict.entries()) {
        FontGlyph g;
        const auto it = handmade.find(entry.character);
        g = (it != handmade.end()) ? it->second : procedural_layout(entry, spec.layout_seed);
        // unit square -> font units
        for (auto& s : g.strokes)
            for (auto& p : s.points) {
                p[0] *= f.units;
                p[1] *= f.units;
            }
        f.glyphs[entry.character] = std::move(g);
    }
    return f;
}

}  // namespace calli
