#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace cyclelapse {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// RGB image, row-major interleaved (HWC), values nominally in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    static constexpr int kChannels = 3;

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * kChannels, fill) {}

    bool empty() const { return pixels.empty(); }

    float& at(int y, int x, int c) { return pixels[index(y, x, c)]; }
    float at(int y, int x, int c) const { return pixels[index(y, x, c)]; }

    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width + x) * kChannels + c;
    }

    bool operator==(const Image&) const = default;
};

/// [0,1] -> 8-bit with round-half-away-from-zero; values outside are clamped.
std::uint8_t quantize8(float v);

/// Image whose values are snapped to the 8-bit grid.
Image quantized(const Image& img);

Image read_png(const std::filesystem::path& path);

/// Writes 8- or 16-bit PNG via a temporary file and rename.
void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 8);

std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);

/// Box-filter downscale by an integer factor.
Image downscale(const Image& img, int factor);

}  // namespace cyclelapse
