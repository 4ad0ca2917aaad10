// Minimal PNG codec for 8-bit images. The DEFLATE stream is handled by zlib;
// chunk framing, filtering and pixel conversion live here.

#include "hm/image_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace hm {

namespace {

constexpr unsigned char kPngSignature[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

uint32_t be32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void put_be32(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void append_chunk(std::vector<unsigned char>& out, const char type[4],
                  const unsigned char* data, size_t len) {
    put_be32(out, uint32_t(len));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    if (len > 0) out.insert(out.end(), data, data + len);
    uint32_t crc = uint32_t(::crc32(0, out.data() + start, uInt(4 + len)));
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

Tensor<float> read_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_image: cannot open '" + path + "'");
    std::vector<unsigned char> file((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    if (file.size() < 8 || std::memcmp(file.data(), kPngSignature, 8) != 0)
        throw std::runtime_error("read_image: '" + path + "' is not a PNG file");

    uint32_t width = 0, height = 0;
    int bit_depth = 0, color_type = 0, interlace = 0;
    std::vector<unsigned char> idat;
    size_t pos = 8;
    bool saw_ihdr = false, saw_iend = false;
    while (pos + 8 <= file.size()) {
        uint32_t len = be32(&file[pos]);
        if (pos + 12 + len > file.size())
            throw std::runtime_error("read_image: corrupt PNG (truncated chunk) in '" + path + "'");
        const char* type = reinterpret_cast<const char*>(&file[pos + 4]);
        const unsigned char* data = &file[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw std::runtime_error("read_image: corrupt IHDR in '" + path + "'");
            width = be32(data);
            height = be32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            interlace = data[12];
            saw_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (!saw_ihdr || !saw_iend || width == 0 || height == 0)
        throw std::runtime_error("read_image: corrupt PNG structure in '" + path + "'");
    if (bit_depth == 16)
        throw std::runtime_error("read_image: unsupported format: 16-bit PNG '" + path + "'");
    if (bit_depth != 8)
        throw std::runtime_error("read_image: unsupported bit depth " + std::to_string(bit_depth) +
                                 " in '" + path + "'");
    if (color_type == 3)
        throw std::runtime_error("read_image: unsupported format: palette PNG '" + path + "'");
    if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6)
        throw std::runtime_error("read_image: unsupported color type " +
                                 std::to_string(color_type) + " in '" + path + "'");
    if (interlace != 0)
        throw std::runtime_error("read_image: unsupported format: interlaced PNG '" + path + "'");

    const int channels = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;
    const size_t stride = size_t(width) * size_t(channels);
    const size_t raw_size = (stride + 1) * size_t(height);
    std::vector<unsigned char> raw(raw_size);
    uLongf dest_len = uLongf(raw_size);
    int zrc = ::uncompress(raw.data(), &dest_len, idat.data(), uLong(idat.size()));
    if (zrc != Z_OK || dest_len != raw_size)
        throw std::runtime_error("read_image: corrupt PNG pixel data in '" + path + "'");

    // undo per-row filters in place
    std::vector<unsigned char> pixels(stride * height);
    const int bpp = channels;
    for (size_t y = 0; y < height; ++y) {
        const unsigned char filter = raw[y * (stride + 1)];
        const unsigned char* src = &raw[y * (stride + 1) + 1];
        unsigned char* dst = &pixels[y * stride];
        const unsigned char* up = y > 0 ? &pixels[(y - 1) * stride] : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            int a = x >= size_t(bpp) ? dst[x - size_t(bpp)] : 0;
            int b = up != nullptr ? up[x] : 0;
            int c = (up != nullptr && x >= size_t(bpp)) ? up[x - size_t(bpp)] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default:
                    throw std::runtime_error("read_image: corrupt PNG filter byte in '" + path +
                                             "'");
            }
            dst[x] = static_cast<unsigned char>(v & 0xff);
        }
    }

    Tensor<float> out({3, int64_t(height), int64_t(width)});
    const int64_t plane = int64_t(height) * int64_t(width);
    for (int64_t y = 0; y < int64_t(height); ++y)
        for (int64_t x = 0; x < int64_t(width); ++x) {
            const unsigned char* px = &pixels[size_t(y) * stride + size_t(x) * size_t(channels)];
            float r, g, b;
            if (channels <= 2) {
                r = g = b = float(px[0]) / 255.0f;
            } else {
                r = float(px[0]) / 255.0f;
                g = float(px[1]) / 255.0f;
                b = float(px[2]) / 255.0f;
            }
            out.data()[y * int64_t(width) + x] = r;
            out.data()[plane + y * int64_t(width) + x] = g;
            out.data()[2 * plane + y * int64_t(width) + x] = b;
        }
    return out;
}

void write_image(const Tensor<float>& image, const std::string& path) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw std::invalid_argument("write_image: expected 3 x H x W tensor, got " +
                                    shape_str(image.shape()));
    const int64_t H = image.dim(1), W = image.dim(2), plane = H * W;

    const size_t stride = size_t(W) * 3;
    std::vector<unsigned char> raw((stride + 1) * size_t(H));
    for (int64_t y = 0; y < H; ++y) {
        raw[size_t(y) * (stride + 1)] = 0;  // filter: none
        unsigned char* row = &raw[size_t(y) * (stride + 1) + 1];
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                float v = image.data()[c * plane + y * W + x];
                v = std::min(1.0f, std::max(0.0f, v));
                row[size_t(x) * 3 + size_t(c)] =
                    static_cast<unsigned char>(std::floor(v * 255.0f + 0.5f));
            }
    }

    uLongf bound = ::compressBound(uLong(raw.size()));
    std::vector<unsigned char> compressed(bound);
    int zrc = ::compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 6);
    if (zrc != Z_OK) throw std::runtime_error("write_image: deflate failed for '" + path + "'");
    compressed.resize(bound);

    std::vector<unsigned char> out;
    out.insert(out.end(), kPngSignature, kPngSignature + 8);
    unsigned char ihdr[13];
    ihdr[0] = static_cast<unsigned char>(uint32_t(W) >> 24);
    ihdr[1] = static_cast<unsigned char>(uint32_t(W) >> 16);
    ihdr[2] = static_cast<unsigned char>(uint32_t(W) >> 8);
    ihdr[3] = static_cast<unsigned char>(uint32_t(W));
    ihdr[4] = static_cast<unsigned char>(uint32_t(H) >> 24);
    ihdr[5] = static_cast<unsigned char>(uint32_t(H) >> 16);
    ihdr[6] = static_cast<unsigned char>(uint32_t(H) >> 8);
    ihdr[7] = static_cast<unsigned char>(uint32_t(H));
    ihdr[8] = 8;   // bit depth
    ihdr[9] = 2;   // color type: RGB
    ihdr[10] = 0;  // compression
    ihdr[11] = 0;  // filter
    ihdr[12] = 0;  // no interlace
    append_chunk(out, "IHDR", ihdr, 13);
    append_chunk(out, "IDAT", compressed.data(), compressed.size());
    append_chunk(out, "IEND", nullptr, 0);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_image: cannot open '" + path + "' for writing");
    os.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!os) throw std::runtime_error("write_image: write failed for '" + path + "'");
}

}  // namespace hm
