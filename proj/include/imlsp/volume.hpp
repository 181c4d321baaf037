#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "imlsp/error.hpp"
#include "imlsp/rng.hpp"
#include "imlsp/tensor.hpp"

namespace imlsp {

// A CT + GTV-mask pair on a common voxel grid. Voxels are stored x-fastest
// (index = x + nx*(y + ny*z)), matching the on-disk raw layout exactly.
struct VolumeSample {
    std::string id;
    std::array<std::size_t, 3> extents{0, 0, 0};  // nx, ny, nz
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::vector<float> ct;        // Hounsfield units
    std::vector<std::uint8_t> mask;  // 0/1

    std::size_t voxel_count() const { return extents[0] * extents[1] * extents[2]; }
    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + extents[0] * (y + extents[1] * z);
    }
};

inline constexpr double kHuClipLow = -500.0;
inline constexpr double kHuClipHigh = 500.0;

// Crops a window of the requested extents, centered on the GTV mask
// centroid (rounded to the nearest voxel), zero-padding wherever the window
// leaves the volume. CT is clipped to [-500, 500] HU and mapped affinely to
// [-1, 1]; channel 0 is the normalized CT, channel 1 the binary mask.
inline Tensor preprocess_volume(const VolumeSample& sample,
                                const std::array<std::size_t, 3>& crop) {
    double cx = 0.0, cy = 0.0, cz = 0.0, count = 0.0;
    for (std::size_t z = 0; z < sample.extents[2]; ++z)
        for (std::size_t y = 0; y < sample.extents[1]; ++y)
            for (std::size_t x = 0; x < sample.extents[0]; ++x)
                if (sample.mask[sample.index(x, y, z)]) {
                    cx += static_cast<double>(x);
                    cy += static_cast<double>(y);
                    cz += static_cast<double>(z);
                    count += 1.0;
                }
    if (count == 0.0)
        throw DataError("preprocess_volume: patient '" + sample.id +
                        "' has an empty GTV mask");
    const std::array<std::int64_t, 3> center = {
        static_cast<std::int64_t>(std::llround(cx / count)),
        static_cast<std::int64_t>(std::llround(cy / count)),
        static_cast<std::int64_t>(std::llround(cz / count))};
    std::array<std::int64_t, 3> start;
    for (int a = 0; a < 3; ++a)
        start[a] = center[a] - static_cast<std::int64_t>(crop[a]) / 2;

    Tensor out({2, crop[0], crop[1], crop[2]});
    for (std::size_t x = 0; x < crop[0]; ++x)
        for (std::size_t y = 0; y < crop[1]; ++y)
            for (std::size_t z = 0; z < crop[2]; ++z) {
                const std::int64_t sx = start[0] + static_cast<std::int64_t>(x);
                const std::int64_t sy = start[1] + static_cast<std::int64_t>(y);
                const std::int64_t sz = start[2] + static_cast<std::int64_t>(z);
                if (sx < 0 || sy < 0 || sz < 0 ||
                    sx >= static_cast<std::int64_t>(sample.extents[0]) ||
                    sy >= static_cast<std::int64_t>(sample.extents[1]) ||
                    sz >= static_cast<std::int64_t>(sample.extents[2]))
                    continue;  // zero padding
                const std::size_t src = sample.index(
                    static_cast<std::size_t>(sx), static_cast<std::size_t>(sy),
                    static_cast<std::size_t>(sz));
                const double hu = std::clamp(static_cast<double>(sample.ct[src]),
                                             kHuClipLow, kHuClipHigh);
                out.at4(0, x, y, z) = hu / kHuClipHigh;
                out.at4(1, x, y, z) = sample.mask[src] ? 1.0 : 0.0;
            }
    return out;
}

namespace detail {

struct Affine3 {
    // Inverse rotation (output -> input), rotation center, shift in voxels.
    std::array<std::array<double, 3>, 3> rot_inv;
    std::array<double, 3> center;
    std::array<double, 3> shift;
};

inline Affine3 make_affine(const std::array<double, 3>& angles_rad,
                           const std::array<double, 3>& shift,
                           const std::array<std::size_t, 3>& extents) {
    const double cx = std::cos(angles_rad[0]), sx = std::sin(angles_rad[0]);
    const double cy = std::cos(angles_rad[1]), sy = std::sin(angles_rad[1]);
    const double cz = std::cos(angles_rad[2]), sz = std::sin(angles_rad[2]);
    // R = Rz * Ry * Rx; the inverse is its transpose.
    const std::array<std::array<double, 3>, 3> r = {{
        {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
        {sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
        {-sy, cy * sx, cy * cx},
    }};
    Affine3 a;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a.rot_inv[i][j] = r[j][i];
    for (int i = 0; i < 3; ++i)
        a.center[i] = 0.5 * static_cast<double>(extents[i] - 1);
    a.shift = shift;
    return a;
}

inline std::array<double, 3> source_of(const Affine3& a, double x, double y,
                                       double z) {
    const double px = x - a.center[0], py = y - a.center[1], pz = z - a.center[2];
    std::array<double, 3> s;
    for (int i = 0; i < 3; ++i)
        s[i] = a.rot_inv[i][0] * px + a.rot_inv[i][1] * py + a.rot_inv[i][2] * pz +
               a.center[i] - a.shift[i];
    return s;
}

}  // namespace detail

// Deterministic core of the augmentation: rotation (radians, applied as
// Rz*Ry*Rx about the volume center) plus a voxel shift. The CT channel is
// resampled trilinearly with out-of-field voxels at -1 (air after
// normalization); the mask channel uses nearest neighbour with 0 fill, so it
// stays binary.
inline Tensor transform_volume(const Tensor& volume,
                               const std::array<double, 3>& angles_rad,
                               const std::array<double, 3>& shift_vox) {
    if (volume.rank() != 4 || volume.extent(0) != 2)
        throw ShapeError("transform_volume: expected [2,X,Y,Z], got " +
                         volume.shape_str());
    const std::array<std::size_t, 3> ext = {volume.extent(1), volume.extent(2),
                                            volume.extent(3)};
    const auto affine = detail::make_affine(angles_rad, shift_vox, ext);
    Tensor out(volume.shape());

    const auto inside = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        return x >= 0 && y >= 0 && z >= 0 && x < static_cast<std::int64_t>(ext[0]) &&
               y < static_cast<std::int64_t>(ext[1]) &&
               z < static_cast<std::int64_t>(ext[2]);
    };

    for (std::size_t x = 0; x < ext[0]; ++x)
        for (std::size_t y = 0; y < ext[1]; ++y)
            for (std::size_t z = 0; z < ext[2]; ++z) {
                const auto s = detail::source_of(affine, static_cast<double>(x),
                                                 static_cast<double>(y),
                                                 static_cast<double>(z));
                // CT: trilinear interpolation.
                {
                    const double fx = std::floor(s[0]), fy = std::floor(s[1]),
                                 fz = std::floor(s[2]);
                    const double wx = s[0] - fx, wy = s[1] - fy, wz = s[2] - fz;
                    double acc = 0.0;
                    for (int dx = 0; dx < 2; ++dx)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dz = 0; dz < 2; ++dz) {
                                const double w = (dx ? wx : 1.0 - wx) *
                                                 (dy ? wy : 1.0 - wy) *
                                                 (dz ? wz : 1.0 - wz);
                                if (w == 0.0) continue;
                                const std::int64_t ix = static_cast<std::int64_t>(fx) + dx;
                                const std::int64_t iy = static_cast<std::int64_t>(fy) + dy;
                                const std::int64_t iz = static_cast<std::int64_t>(fz) + dz;
                                const double v =
                                    inside(ix, iy, iz)
                                        ? volume.at4(0, static_cast<std::size_t>(ix),
                                                     static_cast<std::size_t>(iy),
                                                     static_cast<std::size_t>(iz))
                                        : -1.0;
                                acc += w * v;
                            }
                    out.at4(0, x, y, z) = acc;
                }
                // Mask: nearest neighbour.
                {
                    const std::int64_t ix = static_cast<std::int64_t>(std::llround(s[0]));
                    const std::int64_t iy = static_cast<std::int64_t>(std::llround(s[1]));
                    const std::int64_t iz = static_cast<std::int64_t>(std::llround(s[2]));
                    out.at4(1, x, y, z) =
                        inside(ix, iy, iz)
                            ? volume.at4(1, static_cast<std::size_t>(ix),
                                         static_cast<std::size_t>(iy),
                                         static_cast<std::size_t>(iz))
                            : 0.0;
                }
            }
    return out;
}

// Random 3D rotation up to +-10 degrees per axis and shift up to +-5 voxels
// per axis.
inline Tensor augment(const Tensor& volume, Rng& rng, double max_rot_deg = 10.0,
                      double max_shift_vox = 5.0) {
    const double to_rad = std::numbers::pi / 180.0;
    std::array<double, 3> angles, shift;
    for (int i = 0; i < 3; ++i)
        angles[i] = rng.uniform(-max_rot_deg, max_rot_deg) * to_rad;
    for (int i = 0; i < 3; ++i)
        shift[i] = rng.uniform(-max_shift_vox, max_shift_vox);
    return transform_volume(volume, angles, shift);
}

// ---------------------------------------------------------------------------
// Volume file format: a JSON header {extents, spacing_mm, dtype, channel,
// data} next to a raw little-endian f32 file, written x-fastest.

struct VolumeChannel {
    std::array<std::size_t, 3> extents{0, 0, 0};
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::string channel;  // "ct" | "mask" | "activation"
    std::vector<float> data;
};

inline void write_volume_channel(const std::filesystem::path& header_path,
                                 const VolumeChannel& vol) {
    namespace fs = std::filesystem;
    fs::path raw_path = header_path;
    raw_path.replace_extension(".raw");

    nlohmann::json header;
    header["extents"] = vol.extents;
    header["spacing_mm"] = vol.spacing_mm;
    header["dtype"] = "f32le";
    header["channel"] = vol.channel;
    header["data"] = raw_path.filename().string();

    std::ofstream hf(header_path);
    if (!hf) throw DataError("cannot write volume header " + header_path.string());
    hf << header.dump(2) << "\n";
    hf.close();

    std::ofstream rf(raw_path, std::ios::binary);
    if (!rf) throw DataError("cannot write volume data " + raw_path.string());
    static_assert(sizeof(float) == 4);
    rf.write(reinterpret_cast<const char*>(vol.data.data()),
             static_cast<std::streamsize>(vol.data.size() * sizeof(float)));
    if (!rf) throw DataError("short write to " + raw_path.string());
}

inline VolumeChannel read_volume_channel(const std::filesystem::path& header_path) {
    std::ifstream hf(header_path);
    if (!hf) throw DataError("missing volume header " + header_path.string());
    nlohmann::json header;
    try {
        hf >> header;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed volume header " + header_path.string() + ": " +
                        e.what());
    }
    VolumeChannel vol;
    try {
        const auto ext = header.at("extents");
        for (int i = 0; i < 3; ++i) vol.extents[i] = ext.at(i).get<std::size_t>();
        const auto sp = header.at("spacing_mm");
        for (int i = 0; i < 3; ++i) vol.spacing_mm[i] = sp.at(i).get<double>();
        if (header.at("dtype").get<std::string>() != "f32le")
            throw DataError("unsupported dtype in " + header_path.string());
        vol.channel = header.at("channel").get<std::string>();
        const auto raw_path =
            header_path.parent_path() / header.at("data").get<std::string>();
        std::ifstream rf(raw_path, std::ios::binary);
        if (!rf) throw DataError("missing volume data " + raw_path.string());
        const std::size_t n = vol.extents[0] * vol.extents[1] * vol.extents[2];
        vol.data.resize(n);
        rf.read(reinterpret_cast<char*>(vol.data.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (static_cast<std::size_t>(rf.gcount()) != n * sizeof(float))
            throw DataError("volume data " + raw_path.string() +
                            " is shorter than its header declares");
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed volume header " + header_path.string() + ": " +
                        e.what());
    }
    return vol;
}

// Binary greyscale PGM (P5, maxval 255).
inline void write_pgm(const std::filesystem::path& path, std::size_t width,
                      std::size_t height, const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != width * height)
        throw UsageError("write_pgm: pixel count does not match dimensions");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write image " + path.string());
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
    if (!f) throw DataError("short write to " + path.string());
}

}  // namespace imlsp
