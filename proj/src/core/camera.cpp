#include "citysplat/core/camera.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "citysplat/core/errors.hpp"

namespace citysplat {

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy))
        throw InvalidParameter("camera " + id + ": focal lengths must be positive");
    if (width <= 0 || height <= 0) throw InvalidParameter("camera " + id + ": resolution must be positive");
    if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
        throw InvalidParameter("camera " + id + ": principal point outside the image");
    if (!rotation.allFinite() || !translation.allFinite())
        throw InvalidParameter("camera " + id + ": non-finite pose");
    const double err = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (err > 1e-9) throw InvalidParameter("camera " + id + ": rotation is not orthonormal");
}

Camera look_at(const std::string& id, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
               const Eigen::Vector3d& down, double focal, int width, int height) {
    const Eigen::Vector3d z = (target - eye).normalized();
    Eigen::Vector3d y = down - down.dot(z) * z;
    if (y.norm() < 1e-12) throw InvalidParameter("look_at: down vector parallel to view direction");
    y.normalize();
    const Eigen::Vector3d x = y.cross(z);
    Camera cam;
    cam.id = id;
    cam.fx = cam.fy = focal;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.rotation.row(0) = x.transpose();
    cam.rotation.row(1) = y.transpose();
    cam.rotation.row(2) = z.transpose();
    cam.translation = -cam.rotation * eye;
    return cam;
}

std::vector<Camera> load_cameras(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open camera file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("camera file " + path + ": " + e.what());
    }
    if (!doc.is_array()) throw ParseError("camera file " + path + ": expected a JSON array");
    std::vector<Camera> cams;
    try {
        for (const auto& j : doc) {
            Camera c;
            c.id = j.at("id").get<std::string>();
            c.fx = j.at("fx").get<double>();
            c.fy = j.at("fy").get<double>();
            c.cx = j.at("cx").get<double>();
            c.cy = j.at("cy").get<double>();
            c.width = j.at("width").get<int>();
            c.height = j.at("height").get<int>();
            const auto r = j.at("rotation").get<std::vector<double>>();
            const auto t = j.at("translation").get<std::vector<double>>();
            if (r.size() != 9 || t.size() != 3) throw ParseError("camera " + c.id + ": bad pose arrays");
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) c.rotation(a, b) = r[static_cast<std::size_t>(3 * a + b)];
                c.translation[a] = t[static_cast<std::size_t>(a)];
            }
            c.validate();
            cams.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("camera file " + path + ": " + e.what());
    } catch (const InvalidParameter& e) {
        throw ParseError("camera file " + path + ": " + e.what());
    }
    return cams;
}

void save_cameras(const std::vector<Camera>& cameras, const std::string& path) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& c : cameras) {
        std::vector<double> r(9), t(3);
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) r[static_cast<std::size_t>(3 * a + b)] = c.rotation(a, b);
            t[static_cast<std::size_t>(a)] = c.translation[a];
        }
        doc.push_back({{"id", c.id},
                       {"fx", c.fx},
                       {"fy", c.fy},
                       {"cx", c.cx},
                       {"cy", c.cy},
                       {"width", c.width},
                       {"height", c.height},
                       {"rotation", r},
                       {"translation", t}});
    }
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write camera file: " + path);
    out << doc.dump(2) << '\n';
}

} // namespace citysplat
