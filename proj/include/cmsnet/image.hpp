#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cmsnet/common.hpp"
#include "cmsnet/tensor.hpp"

namespace cmsnet {

// 8-bit image, interleaved channels (1 = gray, 3 = RGB).
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<std::uint8_t> data;

    Image() = default;
    Image(int h_, int w_, int c_, std::uint8_t fill = 0)
        : h(h_), w(w_), c(c_),
          data(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

    std::uint8_t& at(int y, int x, int ch) {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    std::uint8_t at(int y, int x, int ch) const {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    bool operator==(const Image&) const = default;
};

// Class-id mask, 8-bit semantics but stored as int32 for arithmetic ease.
struct Mask {
    int h = 0, w = 0;
    std::vector<std::int32_t> data;

    Mask() = default;
    Mask(int h_, int w_, std::int32_t fill = 0)
        : h(h_), w(w_), data(static_cast<std::size_t>(h_) * w_, fill) {}

    std::int32_t& at(int y, int x) {
        return data[static_cast<std::size_t>(y) * w + x];
    }
    std::int32_t at(int y, int x) const {
        return data[static_cast<std::size_t>(y) * w + x];
    }
    bool operator==(const Mask&) const = default;
};

// ---------------------------------------------------------------------------
// PNM io (P5 gray / P6 rgb); dependency-free mask and image storage.

namespace detail {
inline int read_pnm_int(std::istream& is) {
    // skips whitespace and '#' comments
    int ch = is.peek();
    while (ch == '#' || std::isspace(ch)) {
        if (ch == '#') is.ignore(1 << 20, '\n');
        else is.get();
        ch = is.peek();
    }
    int v;
    if (!(is >> v)) throw data_error("malformed PNM header");
    return v;
}
}  // namespace detail

inline void save_image(const Image& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("cannot open for writing: " + path);
    if (img.c == 1) os << "P5\n";
    else if (img.c == 3) os << "P6\n";
    else throw config_error("save_image: only 1 or 3 channels supported");
    os << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size()));
}

inline Image load_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open image file: " + path);
    std::string magic;
    is >> magic;
    int c;
    if (magic == "P5") c = 1;
    else if (magic == "P6") c = 3;
    else throw data_error("unsupported image format in " + path);
    int w = detail::read_pnm_int(is);
    int h = detail::read_pnm_int(is);
    int maxval = detail::read_pnm_int(is);
    if (maxval != 255) throw data_error("unsupported PNM maxval in " + path);
    is.get();  // single whitespace after header
    Image img(h, w, c);
    is.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
    if (!is) throw data_error("truncated image file: " + path);
    return img;
}

inline void save_mask(const Mask& m, const std::string& path) {
    Image img(m.h, m.w, 1);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        std::int32_t v = m.data[i];
        if (v < 0 || v > 255) throw data_error("mask value out of 8-bit range");
        img.data[i] = static_cast<std::uint8_t>(v);
    }
    save_image(img, path);
}

inline Mask load_mask(const std::string& path) {
    Image img = load_image(path);
    if (img.c != 1) throw data_error("mask must be single-channel: " + path);
    Mask m(img.h, img.w);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = img.data[i];
    return m;
}

// ---------------------------------------------------------------------------

// [0,255] -> [0,1] float tensor, batch of one.
inline Tensor image_to_tensor(const Image& img) {
    Tensor t(1, img.h, img.w, img.c);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        t.data[i] = static_cast<float>(img.data[i]) / 255.0f;
    return t;
}

}  // namespace cmsnet
