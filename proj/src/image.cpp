#include "cyclelapse/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace cyclelapse {

namespace {

cv::Mat to_mat(const Image& img, int bit_depth) {
    const bool wide = bit_depth == 16;
    cv::Mat mat(img.height, img.width, wide ? CV_16UC3 : CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                // OpenCV stores BGR.
                const float v = img.at(y, x, c);
                if (wide) {
                    const double q = std::floor(std::clamp<double>(v, 0.0, 1.0) * 65535.0 + 0.5);
                    mat.at<cv::Vec3w>(y, x)[2 - c] = static_cast<std::uint16_t>(q);
                } else {
                    mat.at<cv::Vec3b>(y, x)[2 - c] = quantize8(v);
                }
            }
        }
    }
    return mat;
}

Image from_mat(const cv::Mat& mat) {
    if (mat.empty()) throw ImageError("image could not be decoded");
    cv::Mat bgr;
    if (mat.channels() == 1) {
        cv::Mat tmp[] = {mat, mat, mat};
        cv::merge(tmp, 3, bgr);
    } else if (mat.channels() == 4) {
        std::vector<cv::Mat> planes;
        cv::split(mat, planes);
        planes.pop_back();
        cv::merge(planes, bgr);
    } else {
        bgr = mat;
    }
    Image img(bgr.rows, bgr.cols);
    const bool wide = bgr.depth() == CV_16U;
    if (!wide && bgr.depth() != CV_8U) throw ImageError("unsupported image bit depth");
    const float scale = wide ? 65535.0f : 255.0f;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float raw = wide ? float(bgr.at<cv::Vec3w>(y, x)[2 - c])
                                       : float(bgr.at<cv::Vec3b>(y, x)[2 - c]);
                img.at(y, x, c) = raw / scale;
            }
        }
    }
    return img;
}

}  // namespace

std::uint8_t quantize8(float v) {
    const double scaled = std::clamp<double>(v, 0.0, 1.0) * 255.0;
    return static_cast<std::uint8_t>(std::floor(scaled + 0.5));
}

Image quantized(const Image& img) {
    Image out = img;
    for (auto& v : out.pixels) v = static_cast<float>(quantize8(v)) / 255.0f;
    return out;
}

Image read_png(const std::filesystem::path& path) {
    cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty()) throw ImageError("cannot read image " + path.string());
    return from_mat(mat);
}

void write_png(const std::filesystem::path& path, const Image& img, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 16) throw ImageError("PNG bit depth must be 8 or 16");
    auto tmp = path;
    tmp += ".tmp.png";
    if (!cv::imwrite(tmp.string(), to_mat(img, bit_depth)))
        throw ImageError("cannot write image " + path.string());
    std::filesystem::rename(tmp, path);
}

std::vector<std::uint8_t> encode_png(const Image& img) {
    std::vector<std::uint8_t> out;
    if (!cv::imencode(".png", to_mat(img, 8), out)) throw ImageError("PNG encoding failed");
    return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
    cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
    return from_mat(cv::imdecode(buf, cv::IMREAD_UNCHANGED));
}

Image downscale(const Image& img, int factor) {
    if (factor < 1 || img.height % factor != 0 || img.width % factor != 0)
        throw ImageError("downscale factor must divide the image size");
    if (factor == 1) return img;
    Image out(img.height / factor, img.width / factor);
    const float norm = 1.0f / float(factor * factor);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < 3; ++c) {
                float acc = 0.0f;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx) acc += img.at(y * factor + dy, x * factor + dx, c);
                out.at(y, x, c) = acc * norm;
            }
    return out;
}

}  // namespace cyclelapse
