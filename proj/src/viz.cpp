#include "adaptparse/viz.hpp"

#include <algorithm>
#include <array>
#include <sstream>

#include "adaptparse/tensor_io.hpp"

namespace adaptparse {

namespace {

struct Rgb {
    std::uint8_t r, g, b;
};

constexpr std::array<Rgb, 12> kPalette = {{
    {40, 40, 40},     // bg
    {230, 180, 140},  // head / face
    {90, 60, 30},     // hair
    {70, 160, 70},    // upper body / u-clothes
    {120, 200, 120},  // l-arm
    {40, 120, 40},    // r-arm
    {70, 70, 200},    // lower body / pants
    {120, 120, 230},  // l-leg
    {40, 40, 150},    // r-leg
    {200, 90, 200},   // dress
    {230, 230, 90},   // l-shoe
    {160, 160, 40},   // r-shoe
}};

// Coarse maps reuse the head/upper/lower slots.
constexpr std::array<int, 4> kCoarseToPalette = {0, 1, 3, 6};

void write_bmp(const std::filesystem::path& path, int H, int W,
               const std::vector<std::uint8_t>& rgb) {
    const int row_bytes = ((W * 3 + 3) / 4) * 4;
    const int data_size = row_bytes * H;
    const int file_size = 54 + data_size;
    std::ostringstream os(std::ios::binary);
    const auto put_u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
    };
    const auto put_u16 = [&](std::uint16_t v) {
        os.put(static_cast<char>(v & 0xFF));
        os.put(static_cast<char>((v >> 8) & 0xFF));
    };
    os.put('B');
    os.put('M');
    put_u32(static_cast<std::uint32_t>(file_size));
    put_u32(0);
    put_u32(54);
    put_u32(40);
    put_u32(static_cast<std::uint32_t>(W));
    put_u32(static_cast<std::uint32_t>(H));
    put_u16(1);
    put_u16(24);
    put_u32(0);
    put_u32(static_cast<std::uint32_t>(data_size));
    put_u32(2835);
    put_u32(2835);
    put_u32(0);
    put_u32(0);
    // Bottom-up rows, BGR, padded to 4 bytes.
    for (int y = H - 1; y >= 0; --y) {
        int written = 0;
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y * W + x) * 3;
            os.put(static_cast<char>(rgb[i + 2]));
            os.put(static_cast<char>(rgb[i + 1]));
            os.put(static_cast<char>(rgb[i]));
            written += 3;
        }
        while (written % 4 != 0) {
            os.put(0);
            ++written;
        }
    }
    write_file_atomic(path, os.str());
}

}  // namespace

void write_label_bmp(const Tensor& labels, const std::filesystem::path& path) {
    if (labels.dtype() != DType::U8 || labels.rank() != 2) {
        throw ShapeError("write_label_bmp expects a u8 [H,W] map");
    }
    const int H = static_cast<int>(labels.dim(0));
    const int W = static_cast<int>(labels.dim(1));
    const auto ids = labels.as<const std::uint8_t>();
    std::uint8_t max_id = 0;
    for (const auto v : ids) max_id = std::max(max_id, v);
    const bool coarse = max_id < 4;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H) * W * 3);
    for (std::size_t i = 0; i < static_cast<std::size_t>(H) * W; ++i) {
        const int id = ids[i];
        const Rgb c = kPalette[static_cast<std::size_t>(
            coarse ? kCoarseToPalette[static_cast<std::size_t>(id)] : std::min(id, 11))];
        rgb[i * 3] = c.r;
        rgb[i * 3 + 1] = c.g;
        rgb[i * 3 + 2] = c.b;
    }
    write_bmp(path, H, W, rgb);
}

void write_image_bmp(const Tensor& image, const std::filesystem::path& path) {
    if (image.dtype() != DType::F32 || image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("write_image_bmp expects f32 [3,H,W]");
    }
    const int H = static_cast<int>(image.dim(1));
    const int W = static_cast<int>(image.dim(2));
    const auto px = image.as<const float>();
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H) * W * 3);
    for (std::size_t i = 0; i < static_cast<std::size_t>(H) * W; ++i) {
        for (int c = 0; c < 3; ++c) {
            const float v = std::clamp(px[static_cast<std::size_t>(c * H * W) + i], 0.0f, 1.0f);
            rgb[i * 3 + static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
        }
    }
    write_bmp(path, H, W, rgb);
}

}  // namespace adaptparse
