#include "mhg/pgm.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mhg {

namespace {

[[noreturn]] void fail(const std::string& path, long offset, const std::string& why) {
    std::ostringstream os;
    os << "PGM error in '" << path << "' at byte " << offset << ": " << why;
    throw std::runtime_error(os.str());
}

// Reads the next whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF) fail(path, static_cast<long>(in.tellg()), "malformed header (unexpected end of file)");
    std::string tok;
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok;
}

int parse_int(const std::string& tok, std::istream& in, const std::string& path, const char* what) {
    try {
        size_t pos = 0;
        const int v = std::stoi(tok, &pos);
        if (pos != tok.size() || v < 0) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        fail(path, static_cast<long>(in.tellg()), std::string("malformed header (bad ") + what + " '" + tok + "')");
    }
}

}  // namespace

LabelMask load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("PGM error: cannot open '" + path + "' (missing file?)");

    const std::string magic = next_token(in, path);
    if (magic != "P5") fail(path, 0, "malformed header (magic '" + magic + "', expected P5)");
    const int w = parse_int(next_token(in, path), in, path, "width");
    const int h = parse_int(next_token(in, path), in, path, "height");
    const int maxval = parse_int(next_token(in, path), in, path, "maxval");
    if (w <= 0 || h <= 0) fail(path, static_cast<long>(in.tellg()), "malformed header (non-positive dimensions)");
    if (maxval <= 0 || maxval > 255) fail(path, static_cast<long>(in.tellg()), "unsupported bit depth (maxval " + std::to_string(maxval) + ")");
    // exactly one whitespace byte separates header from raster
    LabelMask mask(h, w);
    in.read(reinterpret_cast<char*>(mask.v.data()), static_cast<std::streamsize>(mask.v.size()));
    if (static_cast<size_t>(in.gcount()) != mask.v.size()) {
        fail(path, static_cast<long>(in.tellg()), "malformed header (truncated raster, expected " + std::to_string(mask.v.size()) + " bytes)");
    }
    return mask;
}

void save_pgm(const LabelMask& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("PGM error: cannot write '" + path + "'");
    out << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(mask.v.data()), static_cast<std::streamsize>(mask.v.size()));
    if (!out) throw std::runtime_error("PGM error: short write to '" + path + "'");
}

ImageGrid load_pgm_image(const std::string& path) {
    const LabelMask raw = load_pgm(path);
    ImageGrid img(raw.h, raw.w);
    for (size_t i = 0; i < raw.v.size(); ++i) img.v[i] = raw.v[i] / 255.0;
    return img;
}

void save_pgm_image(const ImageGrid& img, const std::string& path) {
    LabelMask raw(img.h, img.w);
    for (size_t i = 0; i < img.v.size(); ++i) {
        const double q = std::clamp(img.v[i], 0.0, 1.0) * 255.0;
        raw.v[i] = static_cast<uint8_t>(std::lround(q));
    }
    save_pgm(raw, path);
}

}  // namespace mhg
