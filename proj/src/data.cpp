#include "lddmm/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "lddmm/error.hpp"

namespace lddmm::data {

void validate(const TorusSpec& spec) {
    if (spec.size < 16) throw InvalidParameter("torus: size must be >= 16");
    if (spec.count < 2) throw InvalidParameter("torus: count must be >= 2");
    if (!(spec.inner_std >= 0.0) || !(spec.outer_std >= 0.0))
        throw InvalidParameter("torus: standard deviations must be >= 0");
    if (!std::isfinite(spec.inner_mean) || !std::isfinite(spec.outer_mean))
        throw InvalidParameter("torus: means must be finite");
    if (!(spec.blur_sigma >= 0.0)) throw InvalidParameter("torus: blur sigma must be >= 0");
}

TorusParams draw_torus(const TorusSpec& spec, std::size_t index) {
    validate(spec);
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);
    auto draw = [&rng](double mean, double sd) {
        if (sd == 0.0) return mean;
        return std::normal_distribution<double>(mean, sd)(rng);
    };
    const double limit = static_cast<double>(spec.size) / 2.0 - 2.0;
    for (int attempt = 0; attempt < 100; ++attempt) {
        TorusParams p;
        for (std::size_t a = 0; a < 2; ++a) {
            p.inner[a] = draw(spec.inner_mean, spec.inner_std);
            p.outer[a] = draw(spec.outer_mean, spec.outer_std);
        }
        bool ok = true;
        for (std::size_t a = 0; a < 2; ++a) ok = ok && p.inner[a] >= 1.0 && p.inner[a] < p.outer[a] && p.outer[a] <= limit;
        if (ok) return p;
    }
    throw GenerationError("torus: no valid semi-axes after 100 draws for image " + std::to_string(index));
}

grid::ScalarImage gaussian_blur(const grid::ScalarImage& image, double sigma) {
    if (sigma == 0.0) return image;
    if (!(sigma > 0.0)) throw InvalidParameter("gaussian_blur: sigma must be >= 0");
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& k : kernel) k /= total;

    const auto& g = image.grid;
    grid::ScalarImage cur = image;
    for (std::size_t a = 0; a < g.dims(); ++a) {
        grid::ScalarImage next(g);
        const long n = static_cast<long>(g.extent(a));
        const std::size_t stride = g.stride(a);
        for (std::size_t node = 0; node < g.node_count(); ++node) {
            const long i = static_cast<long>(g.unravel(node)[a]);
            const std::size_t base = node - static_cast<std::size_t>(i) * stride;
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const long j = std::clamp(i + k, 0L, n - 1);
                acc += kernel[k + radius] * cur.values[base + static_cast<std::size_t>(j) * stride];
            }
            next.values[node] = acc;
        }
        cur = std::move(next);
    }
    return cur;
}

TorusSample render_torus(const TorusParams& params, std::size_t size, double blur_sigma) {
    const grid::GridSpec g({size, size});
    TorusSample s{grid::ScalarImage(g), grid::LabelImage(g), params};
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    for (std::size_t node = 0; node < g.node_count(); ++node) {
        const auto idx = g.unravel(node);
        const double x = static_cast<double>(idx[0]) - c, y = static_cast<double>(idx[1]) - c;
        auto inside = [&](const std::array<double, 2>& ax) {
            return (x / ax[0]) * (x / ax[0]) + (y / ax[1]) * (y / ax[1]) <= 1.0;
        };
        if (inside(params.inner)) {
            s.labels.values[node] = interior_label;
        } else if (inside(params.outer)) {
            s.labels.values[node] = annulus_label;
            s.image.values[node] = 1.0;
        }
    }
    s.image = gaussian_blur(s.image, blur_sigma);
    // a normalised kernel can still round a plateau to 1 + ulp
    for (auto& v : s.image.values) v = std::clamp(v, 0.0, 1.0);
    return s;
}

std::vector<TorusSample> simulate_torus(const TorusSpec& spec) {
    validate(spec);
    std::vector<TorusSample> out;
    out.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) out.push_back(render_torus(draw_torus(spec, i), spec.size, spec.blur_sigma));
    return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename U>
U little(U x) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(x);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<U>(bytes);
    }
    return x;
}

struct RawHeader {
    std::vector<std::size_t> extents;
    std::size_t channels = 1;
    std::string dtype;
};

void write_header(const std::filesystem::path& raw, const grid::GridSpec& g, std::size_t channels, const char* dtype) {
    std::ofstream out(raw_header_path(raw));
    if (!out) throw IoError("save_raw: cannot open " + raw_header_path(raw).string());
    out << "LDDMM-RAW 1\ndims " << g.dims() << "\nextents";
    for (auto e : g.extents()) out << ' ' << e;
    out << "\nchannels " << channels << "\ndtype " << dtype << "\n";
    if (!out) throw IoError("save_raw: write failed for " + raw_header_path(raw).string());
}

RawHeader read_header(const std::filesystem::path& raw) {
    const auto path = raw_header_path(raw);
    std::ifstream in(path);
    if (!in) throw IoError("load_raw: cannot open " + path.string());
    const std::string where = "raw header " + path.string() + ": ";
    std::string line, key;
    RawHeader h;

    auto expect = [&](const char* field) {
        if (!std::getline(in, line)) throw ParseError(where + "missing field '" + field + "'");
        std::istringstream ls(line);
        if (!(ls >> key) || key != field) throw ParseError(where + "expected field '" + field + "', got '" + line + "'");
        return ls;
    };
    {
        auto ls = expect("LDDMM-RAW");
        int version = 0;
        if (!(ls >> version) || version != 1) throw ParseError(where + "unsupported version in field 'LDDMM-RAW'");
    }
    std::size_t dims = 0;
    if (auto ls = expect("dims"); !(ls >> dims) || dims < 2 || dims > 3) throw ParseError(where + "bad value for field 'dims'");
    {
        auto ls = expect("extents");
        h.extents.resize(dims);
        for (auto& e : h.extents)
            if (!(ls >> e) || e < 4) throw ParseError(where + "bad value for field 'extents'");
    }
    if (auto ls = expect("channels"); !(ls >> h.channels) || h.channels < 1) throw ParseError(where + "bad value for field 'channels'");
    if (auto ls = expect("dtype"); !(ls >> h.dtype) || (h.dtype != "float32" && h.dtype != "int32"))
        throw ParseError(where + "unsupported value for field 'dtype'");
    return h;
}

template <typename Stored, typename Value>
void write_payload(const std::filesystem::path& path, const std::vector<Value>& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_raw: cannot open " + path.string());
    for (Value v : values) {
        const Stored s = little(static_cast<Stored>(v));
        out.write(reinterpret_cast<const char*>(&s), sizeof s);
    }
    if (!out) throw IoError("save_raw: write failed for " + path.string());
}

template <typename Stored, typename Value>
std::vector<Value> read_payload(const std::filesystem::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_raw: cannot open " + path.string());
    std::vector<Value> out(count);
    for (auto& v : out) {
        Stored s{};
        if (!in.read(reinterpret_cast<char*>(&s), sizeof s))
            throw ParseError("raw payload " + path.string() + ": truncated, expected " + std::to_string(count) + " values");
        v = static_cast<Value>(little(s));
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw ParseError("raw payload " + path.string() + ": longer than the header declares");
    return out;
}

RawHeader read_header_as(const std::filesystem::path& path, std::size_t channels, const char* dtype, const char* who) {
    RawHeader h = read_header(path);
    if (h.dtype != dtype) throw ParseError(std::string(who) + ": " + path.string() + " has dtype " + h.dtype);
    if (channels != 0 && h.channels != channels)
        throw ParseError(std::string(who) + ": " + path.string() + " has " + std::to_string(h.channels) + " channels");
    return h;
}

}  // namespace

std::filesystem::path raw_header_path(const std::filesystem::path& raw) {
    auto p = raw;
    return p.replace_extension(".hdr");
}

void save_raw(const std::filesystem::path& path, const grid::ScalarImage& image) {
    write_header(path, image.grid, 1, "float32");
    write_payload<float>(path, image.values);
}

void save_raw(const std::filesystem::path& path, const grid::VectorField& field) {
    write_header(path, field.grid, field.dims(), "float32");
    write_payload<float>(path, field.values);
}

void save_raw(const std::filesystem::path& path, const grid::LabelImage& labels) {
    write_header(path, labels.grid, 1, "int32");
    write_payload<std::int32_t>(path, labels.values);
}

grid::ScalarImage load_raw_image(const std::filesystem::path& path) {
    const auto h = read_header_as(path, 1, "float32", "load_raw_image");
    grid::GridSpec g(h.extents);
    return grid::ScalarImage(g, read_payload<float, double>(path, g.node_count()));
}

grid::VectorField load_raw_field(const std::filesystem::path& path) {
    const auto h = read_header_as(path, 0, "float32", "load_raw_field");
    grid::GridSpec g(h.extents);
    if (h.channels != g.dims()) throw ParseError("load_raw_field: " + path.string() + " channel count != dims");
    return grid::VectorField(g, read_payload<float, double>(path, g.node_count() * g.dims()));
}

grid::LabelImage load_raw_labels(const std::filesystem::path& path) {
    const auto h = read_header_as(path, 1, "int32", "load_raw_labels");
    grid::GridSpec g(h.extents);
    return grid::LabelImage(g, read_payload<std::int32_t, std::int32_t>(path, g.node_count()));
}

void export_pgm(const std::filesystem::path& path, const grid::ScalarImage& image) {
    const auto& g = image.grid;
    if (g.dims() != 2) throw ShapeError("export_pgm: only 2D images can be written as PGM");
    double mx = 0.0;
    for (double v : image.values) {
        if (!std::isfinite(v)) throw InvalidInput("export_pgm: non-finite pixel value");
        mx = std::max(mx, v);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("export_pgm: cannot open " + path.string());
    out << "P5\n" << g.extent(1) << ' ' << g.extent(0) << "\n255\n";
    for (double v : image.values) {
        const double q = mx > 0.0 ? std::round(255.0 * std::max(v, 0.0) / mx) : 0.0;
        out.put(static_cast<char>(static_cast<unsigned char>(q)));
    }
    if (!out) throw IoError("export_pgm: write failed for " + path.string());
}

grid::ScalarImage load_nifti(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_nifti: cannot open " + path.string());
    const std::string where = "nifti " + path.string() + ": ";
    std::array<char, 348> hdr{};
    if (!in.read(hdr.data(), hdr.size())) throw ParseError(where + "truncated header");
    auto get = [&](std::size_t offset, auto zero) {
        decltype(zero) v;
        std::memcpy(&v, hdr.data() + offset, sizeof v);
        return little(v);
    };

    if (get(0, std::int32_t{}) != 348) throw ParseError(where + "field sizeof_hdr is not 348 (big-endian or not NIfTI-1)");
    if (std::memcmp(hdr.data() + 344, "n+1\0", 4) != 0) throw ParseError(where + "field magic is not 'n+1' (single-file NIfTI-1)");
    const int ndim = get(40, std::int16_t{});
    if (ndim < 1 || ndim > 7) throw ParseError(where + "field dim[0] out of range");
    std::vector<std::size_t> extents;
    for (int i = 1; i <= ndim; ++i) {
        const int e = get(40 + 2 * i, std::int16_t{});
        if (e < 1) throw ParseError(where + "field dim[" + std::to_string(i) + "] must be positive");
        extents.push_back(static_cast<std::size_t>(e));
    }
    while (extents.size() > 2 && extents.back() == 1) extents.pop_back();
    if (extents.size() < 2 || extents.size() > 3) throw ParseError(where + "field dim: only 2D and 3D volumes are supported");

    const int datatype = get(70, std::int16_t{});
    const int bitpix = get(72, std::int16_t{});
    if (!((datatype == 16 && bitpix == 32) || (datatype == 4 && bitpix == 16)))
        throw ParseError(where + "field datatype " + std::to_string(datatype) + " is unsupported (float32 or int16 only)");
    const float vox_offset = get(108, float{});
    if (!(vox_offset >= 348.0f)) throw ParseError(where + "field vox_offset is below 348");

    grid::GridSpec g(extents);
    std::vector<double> file_order(g.node_count());
    in.seekg(static_cast<std::streamoff>(vox_offset));
    for (auto& v : file_order) {
        if (datatype == 16) {
            float x;
            if (!in.read(reinterpret_cast<char*>(&x), sizeof x)) throw ParseError(where + "truncated voxel data");
            v = little(x);
        } else {
            std::int16_t x;
            if (!in.read(reinterpret_cast<char*>(&x), sizeof x)) throw ParseError(where + "truncated voxel data");
            v = little(x);
        }
    }
    // NIfTI stores axis 0 fastest; grids store axis 0 slowest.
    grid::ScalarImage image(g);
    for (std::size_t node = 0; node < g.node_count(); ++node) {
        const auto idx = g.unravel(node);
        std::size_t offset = 0, stride = 1;
        for (std::size_t a = 0; a < g.dims(); ++a) {
            offset += idx[a] * stride;
            stride *= g.extent(a);
        }
        image.values[node] = file_order[offset];
    }
    return image;
}

std::vector<DatasetEntry> write_torus_dataset(const std::filesystem::path& dir, const TorusSpec& spec) {
    validate(spec);
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv");
    if (!manifest) throw IoError("write_torus_dataset: cannot write " + (dir / "manifest.csv").string());
    manifest << "index,image,labels,inner0,inner1,outer0,outer1\n";
    std::vector<DatasetEntry> out;
    for (std::size_t i = 0; i < spec.count; ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "%05zu", i);
        DatasetEntry e{i, std::string("torus_") + stem + ".raw", std::string("labels_") + stem + ".raw",
                       draw_torus(spec, i)};
        const auto sample = render_torus(e.params, spec.size, spec.blur_sigma);
        save_raw(dir / e.image, sample.image);
        save_raw(dir / e.labels, sample.labels);
        char row[256];
        std::snprintf(row, sizeof row, "%zu,%s,%s,%.17g,%.17g,%.17g,%.17g\n", i, e.image.c_str(), e.labels.c_str(),
                      e.params.inner[0], e.params.inner[1], e.params.outer[0], e.params.outer[1]);
        manifest << row;
        out.push_back(std::move(e));
    }
    if (!manifest) throw IoError("write_torus_dataset: write failed for manifest.csv");
    return out;
}

std::vector<DatasetEntry> read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.csv";
    std::ifstream in(path);
    if (!in) throw IoError("read_manifest: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "index,image,labels,inner0,inner1,outer0,outer1")
        throw ParseError("read_manifest: unexpected header in " + path.string());
    std::vector<DatasetEntry> out;
    std::size_t no = 1;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (f.size() != 7) throw ParseError("read_manifest: line " + std::to_string(no) + " has " +
                                            std::to_string(f.size()) + " fields, expected 7");
        DatasetEntry e;
        try {
            e.index = std::stoull(f[0]);
            e.params.inner = {std::stod(f[3]), std::stod(f[4])};
            e.params.outer = {std::stod(f[5]), std::stod(f[6])};
        } catch (const std::exception&) {
            throw ParseError("read_manifest: bad number on line " + std::to_string(no));
        }
        e.image = dir / f[1];
        e.labels = dir / f[2];
        out.push_back(std::move(e));
    }
    if (out.empty()) throw ParseError("read_manifest: no entries in " + path.string());
    return out;
}

}  // namespace lddmm::data
