#pragma once

#include "enerf/common.hpp"
#include "enerf/geometry.hpp"
#include "enerf/image.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace enerf::scenegen {

struct DatasetIoError : EnerfError {
    using EnerfError::EnerfError;
};
struct ManifestParseError : EnerfError {
    using EnerfError::EnerfError;
};
struct ResolutionError : EnerfError {
    using EnerfError::EnerfError;
};

enum class PrimitiveShape { sphere, box };

// Analytic density+color primitive. `size` is the radius for spheres (x
// component) and the half-extents for boxes. Color is diffuse plus a Phong
// lobe from one directional light, which is the minimal view-dependent
// appearance worth fitting.
struct Primitive {
    PrimitiveShape shape = PrimitiveShape::sphere;
    Vec3 center{0, 0, 0};
    Vec3 size{0.5, 0.5, 0.5};
    real density = 30.0;
    Vec3 diffuse{0.5, 0.5, 0.5};
    real specular_strength = 0.0;
    real shininess = 16.0;
    Vec3 light_dir = Vec3(-1, -1, -0.5).normalized();

    bool contains(const Vec3& x) const {
        if (shape == PrimitiveShape::sphere) {
            return (x - center).norm() <= size[0];
        }
        Vec3 d = (x - center).cwiseAbs();
        return d[0] <= size[0] && d[1] <= size[1] && d[2] <= size[2];
    }

    Vec3 outward_normal(const Vec3& x) const {
        if (shape == PrimitiveShape::sphere) {
            Vec3 d = x - center;
            const real n = d.norm();
            return n > 1e-12 ? Vec3(d / n) : Vec3(0, 0, 1);
        }
        Vec3 rel = x - center;
        int axis = 0;
        real best = -1;
        for (int a = 0; a < 3; ++a) {
            const real frac = std::abs(rel[a]) / size[a];
            if (frac > best) {
                best = frac;
                axis = a;
            }
        }
        Vec3 n(0, 0, 0);
        n[axis] = rel[axis] >= 0 ? 1.0 : -1.0;
        return n;
    }

    void validate() const {
        if (density < 0) throw EnerfError("scene: negative density");
        if (shininess < 1) throw EnerfError("scene: shininess must be >= 1");
        if (specular_strength < 0 || specular_strength > 1) {
            throw EnerfError("scene: specular strength outside [0,1]");
        }
        for (int a = 0; a < 3; ++a) {
            if (diffuse[a] < 0 || diffuse[a] > 1) throw EnerfError("scene: diffuse outside [0,1]");
        }
    }
};

struct OracleScene {
    std::string name = "scene";
    std::vector<Primitive> primitives;
    Vec3 background{1, 1, 1};

    void validate() const {
        for (const auto& p : primitives) p.validate();
    }
};

// Density is the sum over containing primitives; color comes from the densest
// containing primitive (ties keep the first).
inline std::pair<real, Vec3> oracle_field(const OracleScene& scene, const Vec3& x,
                                          const Vec3& d) {
    real sigma = 0;
    const Primitive* owner = nullptr;
    for (const auto& p : scene.primitives) {
        if (p.contains(x)) {
            sigma += p.density;
            if (!owner || p.density > owner->density) owner = &p;
        }
    }
    if (!owner) return {sigma, scene.background};
    Vec3 color = owner->diffuse;
    if (owner->specular_strength > 0) {
        const Vec3 n = owner->outward_normal(x);
        const Vec3 reflected = owner->light_dir - 2.0 * owner->light_dir.dot(n) * n;
        const real lobe = std::max(real(0), reflected.dot(-d));
        const real term = owner->specular_strength * std::pow(lobe, owner->shininess);
        color += Vec3(term, term, term);
    }
    return {sigma, color.cwiseMin(1.0).cwiseMax(0.0)};
}

// Dense uniform quadrature of the emission-absorption integral; the
// independent ground truth for the differentiable compositor.
inline Vec3 oracle_render(const OracleScene& scene, const geometry::Ray& ray,
                          int n_quadrature = 4096) {
    ray.validate();
    const real dt = (ray.t_far - ray.t_near) / n_quadrature;
    real transmittance = 1.0;
    Vec3 color(0, 0, 0);
    for (int k = 0; k < n_quadrature; ++k) {
        const real t = ray.t_near + (k + real(0.5)) * dt;
        auto [sigma, c] = oracle_field(scene, ray.at(t), ray.direction);
        if (sigma > 0) {
            const real alpha = 1.0 - std::exp(-sigma * dt);
            color += transmittance * alpha * c;
            transmittance *= 1.0 - alpha;
            if (transmittance < 1e-9) break;
        }
    }
    color += transmittance * scene.background;
    return color;
}

inline OracleScene builtin_scene(const std::string& name) {
    OracleScene scene;
    scene.name = name;
    auto sphere = [](Vec3 c, real r, Vec3 diffuse, real dens) {
        Primitive p;
        p.shape = PrimitiveShape::sphere;
        p.center = c;
        p.size = Vec3(r, r, r);
        p.diffuse = diffuse;
        p.density = dens;
        return p;
    };
    auto box = [](Vec3 c, Vec3 half, Vec3 diffuse, real dens) {
        Primitive p;
        p.shape = PrimitiveShape::box;
        p.center = c;
        p.size = half;
        p.diffuse = diffuse;
        p.density = dens;
        return p;
    };
    if (name == "lambertian") {
        scene.primitives.push_back(sphere({-0.3, 0.05, 0.0}, 0.5, {0.85, 0.25, 0.2}, 40));
        scene.primitives.push_back(box({0.55, -0.15, 0.1}, {0.28, 0.4, 0.28}, {0.2, 0.35, 0.8}, 40));
        scene.primitives.push_back(
            box({0.0, -0.72, 0.0}, {1.3, 0.08, 1.3}, {0.55, 0.55, 0.5}, 40));
    } else if (name == "specular") {
        scene = builtin_scene("lambertian");
        scene.name = name;
        for (auto& p : scene.primitives) {
            p.specular_strength = 0.8;
            p.shininess = 8.0;
        }
    } else if (name == "boxes") {
        scene.primitives.push_back(box({-0.55, 0.0, -0.2}, {0.3, 0.55, 0.3}, {0.8, 0.65, 0.2}, 35));
        scene.primitives.push_back(box({0.45, -0.25, 0.25}, {0.35, 0.3, 0.35}, {0.3, 0.7, 0.4}, 35));
        scene.primitives.push_back(sphere({0.15, 0.45, -0.35}, 0.32, {0.5, 0.3, 0.75}, 35));
    } else {
        throw EnerfError("unknown builtin scene: " + name +
                         " (have lambertian, specular, boxes)");
    }
    scene.validate();
    return scene;
}

inline OracleScene scene_from_json(const nlohmann::json& j) {
    OracleScene scene;
    scene.name = j.value("name", "scene");
    if (j.contains("background")) {
        auto bg = j.at("background");
        scene.background = Vec3(bg.at(0), bg.at(1), bg.at(2));
    }
    for (const auto& pj : j.at("primitives")) {
        Primitive p;
        const std::string shape = pj.at("shape");
        if (shape == "sphere") {
            p.shape = PrimitiveShape::sphere;
        } else if (shape == "box") {
            p.shape = PrimitiveShape::box;
        } else {
            throw EnerfError("scene: unknown primitive shape " + shape);
        }
        auto v3 = [&](const char* key, Vec3 fallback) {
            if (!pj.contains(key)) return fallback;
            auto a = pj.at(key);
            return Vec3(a.at(0), a.at(1), a.at(2));
        };
        p.center = v3("center", p.center);
        if (pj.contains("size")) {
            auto s = pj.at("size");
            if (s.is_number()) {
                const real r = s.get<real>();
                p.size = Vec3(r, r, r);
            } else {
                p.size = Vec3(s.at(0), s.at(1), s.at(2));
            }
        }
        p.density = pj.value("density", p.density);
        p.diffuse = v3("diffuse", p.diffuse);
        p.specular_strength = pj.value("specular_strength", p.specular_strength);
        p.shininess = pj.value("shininess", p.shininess);
        p.light_dir = v3("light_dir", p.light_dir).normalized();
        scene.primitives.push_back(p);
    }
    scene.validate();
    return scene;
}

inline OracleScene load_scene(const std::string& name_or_path) {
    if (std::filesystem::exists(name_or_path)) {
        std::ifstream is(name_or_path);
        nlohmann::json j;
        is >> j;
        return scene_from_json(j);
    }
    return builtin_scene(name_or_path);
}

// ---------------------------------------------------------------------------

struct Frame {
    Mat4 pose = Mat4::Identity();  // camera-to-world, -z forward, +y up
    img::Image image;
    int appearance_index = 0;
    bool is_eval = false;
    std::string file;
};

struct SceneDataset {
    geometry::Intrinsics intrinsics;
    int width = 0;
    int height = 0;
    std::vector<Frame> frames;

    std::vector<int> train_indices() const {
        std::vector<int> out;
        for (int i = 0; i < static_cast<int>(frames.size()); ++i) {
            if (!frames[i].is_eval) out.push_back(i);
        }
        return out;
    }
    std::vector<int> eval_indices() const {
        std::vector<int> out;
        for (int i = 0; i < static_cast<int>(frames.size()); ++i) {
            if (frames[i].is_eval) out.push_back(i);
        }
        return out;
    }
};

enum class CameraRig { orbit, forward, spiral };

inline CameraRig rig_from_string(const std::string& s) {
    if (s == "orbit") return CameraRig::orbit;
    if (s == "forward") return CameraRig::forward;
    if (s == "spiral") return CameraRig::spiral;
    throw EnerfError("unknown camera rig: " + s + " (have orbit, forward, spiral)");
}

inline Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3(0, 1, 0)) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 up_ref = std::abs(forward.dot(up)) > 0.999 ? Vec3(0, 0, 1) : up;
    const Vec3 z = -forward;
    const Vec3 x = up_ref.cross(z).normalized();
    const Vec3 y = z.cross(x);
    Mat4 pose = Mat4::Identity();
    pose.block<3, 1>(0, 0) = x;
    pose.block<3, 1>(0, 1) = y;
    pose.block<3, 1>(0, 2) = z;
    pose.block<3, 1>(0, 3) = eye;
    return pose;
}

struct DatasetGenConfig {
    int n_train = 30;
    int n_eval = 5;
    int width = 64;
    int height = 64;
    CameraRig rig = CameraRig::orbit;
    uint64_t seed = 1;
    real camera_radius = 2.6;
    real fov_degrees = 50.0;
    real t_near = 0.05;
    real t_far = 6.0;
    int quadrature = 2048;
};

inline std::vector<Mat4> rig_poses(const DatasetGenConfig& cfg, int count) {
    std::vector<Mat4> poses;
    const Vec3 center(0, 0, 0);
    for (int i = 0; i < count; ++i) {
        const real frac = static_cast<real>(i) / count;
        Vec3 eye;
        switch (cfg.rig) {
            case CameraRig::orbit: {
                const real theta = 2 * kPi * frac;
                const real elev = 0.35;  // fixed elevation keeps radius exact
                eye = cfg.camera_radius *
                      Vec3(std::cos(theta) * std::cos(elev), std::sin(elev),
                           std::sin(theta) * std::cos(elev));
                break;
            }
            case CameraRig::forward: {
                const Vec3 start(0.0, 0.35, cfg.camera_radius + 1.0);
                const Vec3 step(0, 0, -1.6 / std::max(count - 1, 1));
                eye = start + static_cast<real>(i) * step;
                break;
            }
            case CameraRig::spiral: {
                const real theta = 2 * kPi * frac * 2;  // two turns
                const real elev = 0.15 + 0.5 * frac;
                const real radius = cfg.camera_radius * (1.0 - 0.15 * frac);
                eye = radius * Vec3(std::cos(theta) * std::cos(elev), std::sin(elev),
                                    std::sin(theta) * std::cos(elev));
                break;
            }
        }
        poses.push_back(look_at(eye, center));
    }
    return poses;
}

inline SceneDataset generate_dataset(const OracleScene& scene, const DatasetGenConfig& cfg) {
    if (cfg.n_train < 1 || cfg.n_eval < 0) throw EnerfError("dataset: counts must be positive");
    SceneDataset ds;
    ds.width = cfg.width;
    ds.height = cfg.height;
    const real focal = 0.5 * cfg.width / std::tan(0.5 * cfg.fov_degrees * kPi / 180.0);
    ds.intrinsics = {focal, focal, cfg.width / real(2), cfg.height / real(2)};
    const int total = cfg.n_train + cfg.n_eval;
    auto poses = rig_poses(cfg, total);
    // Interleave eval poses evenly between train poses.
    std::vector<bool> is_eval(total, false);
    for (int k = 0; k < cfg.n_eval; ++k) {
        int idx = static_cast<int>((k + real(0.5)) / cfg.n_eval * total);
        idx = std::min(idx, total - 1);
        while (is_eval[idx]) idx = (idx + 1) % total;
        is_eval[idx] = true;
    }
    for (int i = 0; i < total; ++i) {
        Frame frame;
        frame.pose = poses[i];
        frame.is_eval = is_eval[i];
        frame.appearance_index = i;
        frame.image = img::Image::filled(cfg.width, cfg.height, scene.background);
        for (int y = 0; y < cfg.height; ++y) {
            for (int x = 0; x < cfg.width; ++x) {
                auto ray = geometry::ray_from_pixel(ds.intrinsics, frame.pose, x + real(0.5),
                                                    y + real(0.5), cfg.t_near, cfg.t_far, i);
                frame.image.set_pixel(x, y, oracle_render(scene, ray, cfg.quadrature));
            }
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "frame_%04d.png", i);
        frame.file = buf;
        ds.frames.push_back(std::move(frame));
    }
    return ds;
}

inline void save_dataset(const SceneDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream os(fs::path(dir) / "manifest.txt");
    if (!os) throw DatasetIoError("dataset: cannot write manifest in " + dir);
    os << "ENERF_DATASET 1\n";
    os << "resolution " << ds.width << " " << ds.height << "\n";
    char line[256];
    std::snprintf(line, sizeof(line), "intrinsics %.17g %.17g %.17g %.17g", ds.intrinsics.fx,
                  ds.intrinsics.fy, ds.intrinsics.cx, ds.intrinsics.cy);
    os << line << "\n";
    for (const auto& frame : ds.frames) {
        os << "frame " << frame.file << " " << frame.appearance_index << " "
           << (frame.is_eval ? "eval" : "train");
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) {
                std::snprintf(line, sizeof(line), " %.17g", frame.pose(r, c));
                os << line;
            }
        }
        os << "\n";
        img::write_png(frame.image, (fs::path(dir) / frame.file).string());
    }
    if (!os) throw DatasetIoError("dataset: manifest write failed in " + dir);
}

inline SceneDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto manifest_path = fs::path(dir) / "manifest.txt";
    std::ifstream is(manifest_path);
    if (!is) throw DatasetIoError("dataset: missing manifest " + manifest_path.string());
    SceneDataset ds;
    std::string line;
    int line_no = 0;
    bool have_header = false, have_resolution = false, have_intrinsics = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        auto fail = [&](const std::string& what) {
            throw ManifestParseError("manifest line " + std::to_string(line_no) + ": " + what);
        };
        if (!have_header) {
            int version = 0;
            if (tag != "ENERF_DATASET" || !(ls >> version) || version != 1) {
                fail("expected 'ENERF_DATASET 1' header");
            }
            have_header = true;
        } else if (tag == "resolution") {
            if (!(ls >> ds.width >> ds.height)) fail("malformed resolution");
            have_resolution = true;
        } else if (tag == "intrinsics") {
            if (!(ls >> ds.intrinsics.fx >> ds.intrinsics.fy >> ds.intrinsics.cx >>
                  ds.intrinsics.cy)) {
                fail("malformed intrinsics");
            }
            have_intrinsics = true;
        } else if (tag == "frame") {
            Frame frame;
            std::string split;
            if (!(ls >> frame.file >> frame.appearance_index >> split)) {
                fail("malformed frame fields");
            }
            if (split != "train" && split != "eval") fail("split must be train or eval");
            frame.is_eval = split == "eval";
            for (int r = 0; r < 4; ++r) {
                for (int c = 0; c < 4; ++c) {
                    if (!(ls >> frame.pose(r, c))) fail("truncated pose row");
                }
            }
            const auto img_path = fs::path(dir) / frame.file;
            if (!fs::exists(img_path)) {
                throw DatasetIoError("dataset: frame image missing: " + frame.file);
            }
            frame.image = img::read_png(img_path.string());
            if (!have_resolution) fail("frame before resolution line");
            if (frame.image.width != ds.width || frame.image.height != ds.height) {
                throw ResolutionError("dataset: frame " + frame.file + " is " +
                                      std::to_string(frame.image.width) + "x" +
                                      std::to_string(frame.image.height) + ", manifest says " +
                                      std::to_string(ds.width) + "x" + std::to_string(ds.height));
            }
            ds.frames.push_back(std::move(frame));
        } else {
            fail("unknown keyword " + tag);
        }
    }
    if (!have_header || !have_resolution || !have_intrinsics) {
        throw ManifestParseError("manifest missing header, resolution, or intrinsics");
    }
    return ds;
}

}  // namespace enerf::scenegen
