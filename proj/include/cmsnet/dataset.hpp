#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cmsnet/image.hpp"
#include "json.hpp"

namespace cmsnet {

// ---------------------------------------------------------------------------
// Class table

struct ClassInfo {
    int id;
    std::string name;
    int render_priority;  // higher paints over lower
};

// background lowest, road above it, countable things above the road
inline const std::vector<ClassInfo>& class_table() {
    static const std::vector<ClassInfo> table = {
        {0, "background", 0}, {1, "road", 1},  {2, "person", 4},
        {3, "car", 3},        {4, "moto", 3},  {5, "truck", 3},
        {6, "bus", 3},        {7, "bike", 3},  {8, "animal", 4},
        {9, "cone", 2},
    };
    return table;
}

inline int class_id_by_name(const std::string& name) {
    for (const ClassInfo& ci : class_table())
        if (ci.name == name) return ci.id;
    std::string valid;
    for (const ClassInfo& ci : class_table())
        valid += (valid.empty() ? "" : ", ") + ci.name;
    throw data_error("unknown class label '" + name + "' (valid: " + valid + ")");
}

// ---------------------------------------------------------------------------
// Annotation

struct Point {
    double x, y;
};

struct AnnotatedShape {
    std::string label;   // "road" or "car-17"
    int class_id;
    int instance = -1;   // -1 for stuff labels
    std::vector<Point> polygon;
};

struct SceneAnnotation {
    int width = 0, height = 0;
    std::vector<AnnotatedShape> shapes;  // original annotation order
};

// "car-17" -> (car, 17); "road" -> (road, -1)
inline std::pair<int, int> parse_label(const std::string& label) {
    auto dash = label.rfind('-');
    if (dash != std::string::npos && dash + 1 < label.size()) {
        std::string tail = label.substr(dash + 1);
        if (std::all_of(tail.begin(), tail.end(),
                        [](char c) { return std::isdigit(c); })) {
            return {class_id_by_name(label.substr(0, dash)), std::stoi(tail)};
        }
    }
    return {class_id_by_name(label), -1};
}

inline SceneAnnotation parse_annotation(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw data_error(std::string("annotation parse error: ") + e.what());
    }
    SceneAnnotation ann;
    try {
        ann.width = j.at("imageWidth").get<int>();
        ann.height = j.at("imageHeight").get<int>();
        for (const auto& js : j.at("shapes")) {
            AnnotatedShape s;
            s.label = js.at("label").get<std::string>();
            auto [cid, inst] = parse_label(s.label);
            s.class_id = cid;
            s.instance = inst;
            for (const auto& pt : js.at("points")) {
                if (pt.size() != 2)
                    throw data_error("annotation point is not an [x,y] pair");
                s.polygon.push_back({pt[0].get<double>(), pt[1].get<double>()});
            }
            if (s.polygon.size() < 3)
                throw data_error("degenerate polygon (<3 points) for label '" +
                                 s.label + "'");
            ann.shapes.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("annotation missing field: ") + e.what());
    }
    return ann;
}

inline SceneAnnotation load_annotation(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open annotation file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_annotation(ss.str());
}

inline nlohmann::json annotation_to_json(const SceneAnnotation& ann) {
    nlohmann::json shapes = nlohmann::json::array();
    for (const AnnotatedShape& s : ann.shapes) {
        nlohmann::json pts = nlohmann::json::array();
        for (const Point& p : s.polygon) pts.push_back({p.x, p.y});
        shapes.push_back({{"label", s.label}, {"points", pts}});
    }
    return {{"imageWidth", ann.width},
            {"imageHeight", ann.height},
            {"shapes", shapes}};
}

// ---------------------------------------------------------------------------
// Rasterization: even-odd scanline fill over pixel centers; shapes painted
// in ascending render-priority order so things overwrite road overwrite
// background. Out-of-bounds geometry is clipped.

namespace detail {

inline void fill_polygon(Mask& m, const std::vector<Point>& poly,
                         std::int32_t value) {
    const std::size_t n = poly.size();
    std::vector<double> xs;
    for (int y = 0; y < m.h; ++y) {
        double yc = y + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const Point& a = poly[i];
            const Point& b = poly[(i + 1) % n];
            if ((a.y <= yc && yc < b.y) || (b.y <= yc && yc < a.y))
                xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            int x0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
            int x1 = std::min(m.w, static_cast<int>(std::ceil(xs[k + 1] - 0.5)));
            for (int x = x0; x < x1; ++x) m.at(y, x) = value;
        }
    }
}

}  // namespace detail

inline Mask rasterize(const SceneAnnotation& ann) {
    Mask m(ann.height, ann.width, 0);
    std::vector<const AnnotatedShape*> order;
    order.reserve(ann.shapes.size());
    for (const AnnotatedShape& s : ann.shapes) order.push_back(&s);
    std::stable_sort(order.begin(), order.end(),
                     [](const AnnotatedShape* a, const AnnotatedShape* b) {
                         return class_table()[a->class_id].render_priority <
                                class_table()[b->class_id].render_priority;
                     });
    for (const AnnotatedShape* s : order)
        detail::fill_polygon(m, s->polygon, s->class_id);
    return m;
}

// ---------------------------------------------------------------------------
// Split manifests

struct SampleRef {
    std::string id;
    std::string image_path, mask_path;
    std::string condition;  // daytime, daytime-dust, raining, night, evening
};

struct SplitManifest {
    std::vector<SampleRef> training, validation, testing;
};

struct SplitRatios {
    double training = 0.729, validation = 0.081, testing = 0.190;
};

// Per-condition stratified split, largest-remainder rounding, seeded shuffle.
inline SplitManifest split_dataset(std::vector<SampleRef> samples,
                                   SplitRatios ratios, unsigned seed) {
    double rsum = ratios.training + ratios.validation + ratios.testing;
    if (std::abs(rsum - 1.0) > 1e-9)
        throw config_error("split ratios must sum to 1");

    std::map<std::string, std::vector<SampleRef>> by_condition;
    for (auto& s : samples) by_condition[s.condition].push_back(std::move(s));

    SplitManifest out;
    for (auto& [cond, group] : by_condition) {
        std::sort(group.begin(), group.end(),
                  [](const SampleRef& a, const SampleRef& b) { return a.id < b.id; });
        std::mt19937 rng(seed ^ static_cast<unsigned>(std::hash<std::string>{}(cond)));
        std::shuffle(group.begin(), group.end(), rng);

        const int n = static_cast<int>(group.size());
        const double want[3] = {ratios.training * n, ratios.validation * n,
                                ratios.testing * n};
        int take[3];
        double frac[3];
        int assigned = 0;
        for (int i = 0; i < 3; ++i) {
            take[i] = static_cast<int>(std::floor(want[i]));
            frac[i] = want[i] - take[i];
            assigned += take[i];
        }
        while (assigned < n) {  // hand leftovers to the largest remainders
            int best = 0;
            for (int i = 1; i < 3; ++i)
                if (frac[i] > frac[best]) best = i;
            ++take[best];
            frac[best] = -1;
            ++assigned;
        }
        int pos = 0;
        std::vector<SampleRef>* dests[3] = {&out.training, &out.validation,
                                            &out.testing};
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < take[i]; ++k)
                dests[i]->push_back(group[pos++]);
    }
    return out;
}

// Manifest CSV: sample_id,image_path,mask_path,condition,split
inline void save_manifest(const SplitManifest& m, std::ostream& os) {
    os << "sample_id,image_path,mask_path,condition,split\n";
    auto emit = [&](const std::vector<SampleRef>& v, const char* split) {
        for (const SampleRef& s : v)
            os << s.id << "," << s.image_path << "," << s.mask_path << ","
               << s.condition << "," << split << "\n";
    };
    emit(m.training, "training");
    emit(m.validation, "validation");
    emit(m.testing, "testing");
}

inline SplitManifest load_manifest(std::istream& is) {
    SplitManifest m;
    std::string line;
    if (!std::getline(is, line)) throw data_error("empty manifest");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(cell);
        if (cols.size() != 5)
            throw data_error("manifest row needs 5 columns: " + line);
        SampleRef s{cols[0], cols[1], cols[2], cols[3]};
        if (cols[4] == "training") m.training.push_back(std::move(s));
        else if (cols[4] == "validation") m.validation.push_back(std::move(s));
        else if (cols[4] == "testing") m.testing.push_back(std::move(s));
        else throw data_error("unknown split name: " + cols[4]);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Synthetic scenes: a desk-scale stand-in for real imagery. Scenes are built
// as polygon annotations and rasterized through the same pipeline as real
// data, so image and mask agree by construction.

struct SyntheticScene {
    Image image;  // RGB
    Mask mask;
    SceneAnnotation annotation;
};

namespace detail {
inline std::array<std::uint8_t, 3> class_color(int id) {
    static const std::array<std::uint8_t, 3> palette[10] = {
        {90, 160, 210},  // background: sky-ish
        {105, 90, 70},   // road: brown dirt
        {220, 60, 60},   {60, 60, 220},  {240, 200, 40}, {60, 200, 90},
        {200, 90, 200},  {240, 140, 40}, {120, 220, 220}, {245, 120, 30},
    };
    return palette[id];
}
}  // namespace detail

inline SyntheticScene generate_synthetic_scene(unsigned seed, int h, int w,
                                               int n_classes) {
    if (n_classes < 2 || n_classes > 10)
        throw config_error("synthetic scenes support 2..10 classes");
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SceneAnnotation ann;
    ann.width = w;
    ann.height = h;

    // road: a trapezoidal band over the lower part of the frame
    double top = h * (0.35 + 0.15 * unit(rng));
    double lt = w * 0.25 * unit(rng), rt = w * (1.0 - 0.25 * unit(rng));
    AnnotatedShape road;
    road.label = "road";
    road.class_id = 1;
    road.polygon = {{lt, top}, {rt, top}, {static_cast<double>(w), static_cast<double>(h)},
                    {0.0, static_cast<double>(h)}};
    ann.shapes.push_back(road);

    // obstacles from the remaining classes
    int n_obstacles = n_classes > 2 ? 2 + static_cast<int>(unit(rng) * 3) : 0;
    for (int i = 0; i < n_obstacles; ++i) {
        int cid = 2 + static_cast<int>(unit(rng) * (n_classes - 2));
        if (cid >= n_classes) cid = n_classes - 1;
        double cx = unit(rng) * w, cy = top + unit(rng) * (h - top);
        double rw = w * (0.04 + 0.08 * unit(rng)), rh = h * (0.06 + 0.1 * unit(rng));
        AnnotatedShape s;
        s.label = class_table()[cid].name + "-" + std::to_string(i);
        s.class_id = cid;
        s.instance = i;
        s.polygon = {{cx - rw, cy - rh}, {cx + rw, cy - rh},
                     {cx + rw, cy + rh}, {cx - rw, cy + rh}};
        ann.shapes.push_back(std::move(s));
    }

    SyntheticScene scene;
    scene.annotation = ann;
    scene.mask = rasterize(ann);
    scene.image = Image(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto col = detail::class_color(scene.mask.at(y, x));
            // vertical shading keeps the image from being piecewise constant
            float shade = 0.75f + 0.25f * static_cast<float>(y) / h;
            for (int ch = 0; ch < 3; ++ch)
                scene.image.at(y, x, ch) =
                    static_cast<std::uint8_t>(col[ch] * shade);
        }
    return scene;
}

}  // namespace cmsnet
