#include "msdiff/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "msdiff/error.hpp"

namespace msd {

Tensor make_image(std::size_t h, std::size_t w, const Rgb& fill) {
    std::vector<double> v(h * w * 3);
    for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t c = 0; c < 3; ++c) v[i * 3 + c] = fill[c];
    return Tensor::from({h, w, 3}, std::move(v));
}

void require_image(const Tensor& img, const char* what) {
    if (!img.defined() || img.rank() != 3 || img.shape()[2] != 3) {
        throw ShapeError(std::string(what) + ": expected an [H, W, 3] image, got " +
                         (img.defined() ? shape_str(img.shape()) : std::string("undefined")));
    }
}

std::size_t image_height(const Tensor& img) { return img.shape()[0]; }
std::size_t image_width(const Tensor& img) { return img.shape()[1]; }

static double to_unit(long v) { return static_cast<double>(v) / 255.0; }
static long to_byte(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0); }

void quantize_8bit(Tensor& img) {
    for (auto& v : img.mutable_data()) v = to_unit(to_byte(v));
}

Tensor crop(const Tensor& img, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) {
    require_image(img, "crop");
    const std::size_t w = image_width(img);
    if (x0 >= x1 || y0 >= y1 || x1 > w || y1 > image_height(img)) {
        throw ShapeError("crop: rectangle out of bounds for " + shape_str(img.shape()));
    }
    auto d = img.data();
    std::vector<double> out;
    out.reserve((x1 - x0) * (y1 - y0) * 3);
    for (std::size_t y = y0; y < y1; ++y)
        out.insert(out.end(), d.begin() + (y * w + x0) * 3, d.begin() + (y * w + x1) * 3);
    return Tensor::from({y1 - y0, x1 - x0, 3}, std::move(out));
}

Tensor resize_nearest(const Tensor& img, std::size_t h, std::size_t w) {
    require_image(img, "resize_nearest");
    const std::size_t ih = image_height(img), iw = image_width(img);
    auto d = img.data();
    std::vector<double> out(h * w * 3);
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = std::min(ih - 1, (2 * y + 1) * ih / (2 * h));
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx = std::min(iw - 1, (2 * x + 1) * iw / (2 * w));
            for (std::size_t c = 0; c < 3; ++c) out[(y * w + x) * 3 + c] = d[(sy * iw + sx) * 3 + c];
        }
    }
    return Tensor::from({h, w, 3}, std::move(out));
}

namespace {

void write_netpbm(const std::string& path, const char* magic, std::size_t w, std::size_t h,
                  const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << magic << "\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<unsigned char> read_netpbm(const std::string& path, const std::string& magic, std::size_t channels,
                                       std::size_t& w, std::size_t& h) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image '" + path + "'");
    std::string m;
    in >> m;
    if (m != magic) throw ParseError("'" + path + "': expected " + magic + " header, found '" + m + "'");
    auto next_int = [&]() -> long {
        while (true) {
            in >> std::ws;
            if (in.peek() == '#') {
                std::string comment;
                std::getline(in, comment);
                continue;
            }
            long v = -1;
            in >> v;
            if (!in) throw ParseError("'" + path + "': malformed header");
            return v;
        }
    };
    const long iw = next_int(), ih = next_int(), maxval = next_int();
    if (iw <= 0 || ih <= 0 || maxval != 255) throw ParseError("'" + path + "': unsupported dimensions or maxval");
    in.get();
    w = static_cast<std::size_t>(iw);
    h = static_cast<std::size_t>(ih);
    std::vector<unsigned char> bytes(w * h * channels);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError("'" + path + "': truncated pixel data");
    return bytes;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& img) {
    require_image(img, "write_ppm");
    std::vector<unsigned char> bytes;
    bytes.reserve(img.size());
    for (double v : img.data()) bytes.push_back(static_cast<unsigned char>(to_byte(v)));
    write_netpbm(path, "P6", image_width(img), image_height(img), bytes);
}

Tensor read_ppm(const std::string& path) {
    std::size_t w = 0, h = 0;
    auto bytes = read_netpbm(path, "P6", 3, w, h);
    std::vector<double> v(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) v[i] = to_unit(bytes[i]);
    return Tensor::from({h, w, 3}, std::move(v));
}

void write_pgm(const std::string& path, const Tensor& gray) {
    if (gray.rank() != 2) throw ShapeError("write_pgm: expected [H, W], got " + shape_str(gray.shape()));
    std::vector<unsigned char> bytes;
    bytes.reserve(gray.size());
    for (double v : gray.data()) bytes.push_back(static_cast<unsigned char>(to_byte(v)));
    write_netpbm(path, "P5", gray.shape()[1], gray.shape()[0], bytes);
}

Tensor read_pgm(const std::string& path) {
    std::size_t w = 0, h = 0;
    auto bytes = read_netpbm(path, "P5", 1, w, h);
    std::vector<double> v(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) v[i] = to_unit(bytes[i]);
    return Tensor::from({h, w}, std::move(v));
}

}  // namespace msd
