#include "ldrc/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace ldrc {

namespace {

std::uint8_t to_byte(float v) {
    float scaled = std::round(v * 255.0f);
    return std::uint8_t(std::clamp(scaled, 0.0f, 255.0f));
}

std::string lower_ext(const std::string& path) {
    size_t dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return ext;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path + "' for reading");
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::uint8_t* data, size_t size) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(data), std::streamsize(size));
    if (!f) throw Error("short write to '" + path + "'");
}

// PPM P6 header token reader; '#' comments allowed per the format.
struct PpmReader {
    const std::vector<std::uint8_t>& buf;
    size_t pos = 0;

    int next_int(const std::string& path) {
        for (;;) {
            while (pos < buf.size() && std::isspace(buf[pos])) ++pos;
            if (pos < buf.size() && buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        if (pos >= buf.size() || !std::isdigit(buf[pos]))
            throw Error("ppm: malformed header in '" + path + "'");
        long v = 0;
        while (pos < buf.size() && std::isdigit(buf[pos])) {
            v = v * 10 + (buf[pos] - '0');
            if (v > 1 << 24) throw Error("ppm: dimension overflow in '" + path + "'");
            ++pos;
        }
        return int(v);
    }
};

}  // namespace

Image load_ppm(const std::string& path) {
    auto buf = read_file(path);
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6')
        throw Error("ppm: '" + path + "' is not a P6 file");
    PpmReader rd{buf, 2};
    int w = rd.next_int(path);
    int h = rd.next_int(path);
    int maxval = rd.next_int(path);
    if (w <= 0 || h <= 0) throw Error("ppm: bad dimensions in '" + path + "'");
    if (maxval != 255) throw Error("ppm: only maxval 255 is supported ('" + path + "')");
    if (rd.pos >= buf.size() || !std::isspace(buf[rd.pos]))
        throw Error("ppm: malformed header in '" + path + "'");
    ++rd.pos;  // single whitespace before payload
    size_t need = size_t(3) * w * h;
    if (buf.size() - rd.pos < need)
        throw Error("ppm: truncated payload in '" + path + "' (need " + std::to_string(need) +
                    " bytes, have " + std::to_string(buf.size() - rd.pos) + ")");
    Image img(w, h);
    for (size_t i = 0; i < need; ++i) img.rgb[i] = float(buf[rd.pos + i]) / 255.0f;
    return img;
}

void save_ppm(const Image& img, const std::string& path) {
    std::string header =
        "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.size() + img.rgb.size());
    std::memcpy(out.data(), header.data(), header.size());
    for (size_t i = 0; i < img.rgb.size(); ++i) out[header.size() + i] = to_byte(img.rgb[i]);
    write_file(path, out.data(), out.size());
}

// ---- PNG (8-bit RGB, non-interlaced) ---------------------------------------

namespace {

constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | p[3];
}

void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(std::uint8_t(x >> 24));
    v.push_back(std::uint8_t(x >> 16));
    v.push_back(std::uint8_t(x >> 8));
    v.push_back(std::uint8_t(x));
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
    put_be32(out, std::uint32_t(payload.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    std::uint32_t crc =
        std::uint32_t(crc32(0, out.data() + start, uInt(out.size() - start)));
    put_be32(out, crc);
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

Image load_png(const std::string& path) {
    auto buf = read_file(path);
    if (buf.size() < 8 || std::memcmp(buf.data(), kPngSig, 8) != 0)
        throw Error("png: '" + path + "' is not a PNG file");

    int w = 0, h = 0;
    std::vector<std::uint8_t> idat;
    bool seen_ihdr = false, seen_iend = false;
    size_t pos = 8;
    while (pos + 8 <= buf.size()) {
        std::uint32_t len = be32(buf.data() + pos);
        if (pos + 12 + len > buf.size()) throw Error("png: truncated chunk in '" + path + "'");
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const std::uint8_t* payload = buf.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw Error("png: bad IHDR in '" + path + "'");
            w = int(be32(payload));
            h = int(be32(payload + 4));
            int depth = payload[8], color = payload[9], interlace = payload[12];
            if (depth != 8 || color != 2)
                throw Error("png: only 8-bit RGB is supported ('" + path + "')");
            if (interlace != 0)
                throw Error("png: interlaced files are not supported ('" + path + "')");
            if (w <= 0 || h <= 0 || std::int64_t(w) * h > (std::int64_t(1) << 30))
                throw Error("png: bad dimensions in '" + path + "'");
            seen_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (!seen_ihdr || !seen_iend || idat.empty())
        throw Error("png: missing required chunks in '" + path + "'");

    const size_t stride = size_t(w) * 3;
    std::vector<std::uint8_t> raw((stride + 1) * size_t(h));
    uLongf raw_len = uLongf(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw Error("png: corrupt image data in '" + path + "'");

    Image img(w, h);
    std::vector<std::uint8_t> prev(stride, 0), cur(stride);
    for (int y = 0; y < h; ++y) {
        const std::uint8_t* row = raw.data() + size_t(y) * (stride + 1);
        int filter = row[0];
        const std::uint8_t* src = row + 1;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= 3 ? cur[i - 3] : 0;
            int b = prev[i];
            int c = i >= 3 ? prev[i - 3] : 0;
            int v;
            switch (filter) {
                case 0: v = src[i]; break;
                case 1: v = src[i] + a; break;
                case 2: v = src[i] + b; break;
                case 3: v = src[i] + (a + b) / 2; break;
                case 4: v = src[i] + paeth(a, b, c); break;
                default: throw Error("png: unknown filter type in '" + path + "'");
            }
            cur[i] = std::uint8_t(v);
        }
        for (size_t i = 0; i < stride; ++i) img.rgb[size_t(y) * stride + i] = float(cur[i]) / 255.0f;
        std::swap(prev, cur);
    }
    return img;
}

void save_png(const Image& img, const std::string& path) {
    const size_t stride = size_t(img.width) * 3;
    std::vector<std::uint8_t> raw((stride + 1) * size_t(std::max(img.height, 0)));
    for (int y = 0; y < img.height; ++y) {
        std::uint8_t* row = raw.data() + size_t(y) * (stride + 1);
        row[0] = 0;  // no per-row filtering
        for (size_t i = 0; i < stride; ++i) row[1 + i] = to_byte(img.rgb[size_t(y) * stride + i]);
    }
    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw Error("png: compression failed for '" + path + "'");
    compressed.resize(bound);

    std::vector<std::uint8_t> out(kPngSig, kPngSig + 8);
    std::vector<std::uint8_t> ihdr;
    put_be32(ihdr, std::uint32_t(img.width));
    put_be32(ihdr, std::uint32_t(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type RGB
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlacing
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", compressed);
    append_chunk(out, "IEND", {});
    write_file(path, out.data(), out.size());
}

Image load_image(const std::string& path) {
    std::string ext = lower_ext(path);
    if (ext == "ppm") return load_ppm(path);
    if (ext == "png") return load_png(path);
    throw Error("unsupported image format '" + ext + "' for '" + path + "' (use .ppm or .png)");
}

void save_image(const Image& img, const std::string& path) {
    std::string ext = lower_ext(path);
    if (ext == "ppm") return save_ppm(img, path);
    if (ext == "png") return save_png(img, path);
    throw Error("unsupported image format '" + ext + "' for '" + path + "' (use .ppm or .png)");
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({1, 3, img.height, img.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) t.at(0, c, y, x) = img.at(y, x, c);
    return t;
}

Image tensor_to_image(const Tensor& t) {
    const Shape4& s = t.shape();
    if (s.n != 1 || s.c != 3)
        throw Error("tensor_to_image: expected a 1x3xHxW tensor, got " + s.str());
    Image img(s.w, s.h);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                img.at(y, x, c) = std::clamp(t.at(0, c, y, x), 0.0f, 1.0f);
    return img;
}

Image channel_to_gray(const Tensor& t, int n, int c) {
    const Shape4& s = t.shape();
    float lo = t.at(n, c, 0, 0), hi = lo;
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            float v = t.at(n, c, y, x);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    Image img(s.w, s.h);
    float range = hi - lo;
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            float g = range > 1e-12f ? (t.at(n, c, y, x) - lo) / range : 0.5f;
            img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = g;
        }
    return img;
}

}  // namespace ldrc
