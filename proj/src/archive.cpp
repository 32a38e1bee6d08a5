#include "vstain/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vstain/hash.hpp"

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace vstain::archive {

namespace {

constexpr char kMagic[8] = {'V', 'S', 'T', 'N', 'A', 'R', 'C', 'H'};

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& b) : b_(b) {}

    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (b_.size() - pos_ < n)
            throw IntegrityError(std::string("archive truncated while reading ") + what);
    }

    const std::string& b_;
    std::size_t pos_ = 0;
};

}  // namespace

const nn::Tensor& Archive::at(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.value;
    throw std::out_of_range("archive has no tensor '" + name + "'");
}

bool Archive::contains(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

std::string encode(const Archive& a, DType dtype) {
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dtype));
    const std::string header = a.header.dump();
    put<std::uint64_t>(out, header.size());
    out += header;
    put<std::uint64_t>(out, a.tensors.size());
    for (const auto& t : a.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
        for (int d : t.value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (double v : t.value.values()) {
            if (dtype == DType::f32)
                put<float>(out, static_cast<float>(v));
            else
                put<double>(out, v);
        }
    }
    put<std::uint64_t>(out, fnv1a64(out));
    return out;
}

Archive decode(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw IntegrityError("not a tensor archive (bad magic)");
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    const std::string body = bytes.substr(0, bytes.size() - 8);
    const std::uint64_t actual = fnv1a64(body);
    if (stored != actual)
        throw IntegrityError("archive checksum mismatch: stored " + to_hex64(stored) + ", computed " +
                             to_hex64(actual));

    Reader r(body);
    r.bytes(sizeof(kMagic), "magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kFormatVersion)
        throw IntegrityError("unsupported archive version " + std::to_string(version));
    const auto dtype = static_cast<DType>(r.get<std::uint32_t>("dtype"));
    if (dtype != DType::f32 && dtype != DType::f64) throw IntegrityError("unknown archive dtype");

    Archive a;
    const auto hlen = r.get<std::uint64_t>("header length");
    try {
        a.header = nlohmann::json::parse(r.bytes(hlen, "header"));
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("archive header is not valid JSON: ") + e.what());
    }
    const auto count = r.get<std::uint64_t>("tensor count");
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.bytes(r.get<std::uint32_t>("name length"), "name");
        const auto rank = r.get<std::uint32_t>("rank");
        std::vector<int> shape;
        for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<int>(r.get<std::uint32_t>("dims")));
        t.value = nn::Tensor(shape);
        for (auto& v : t.value.values())
            v = dtype == DType::f32 ? static_cast<double>(r.get<float>("payload")) : r.get<double>("payload");
        a.tensors.push_back(std::move(t));
    }
    if (r.pos() != body.size()) throw IntegrityError("archive has trailing bytes");
    return a;
}

void write_file(const std::filesystem::path& path, const Archive& a, DType dtype) {
    const std::string bytes = encode(a, dtype);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) throw std::runtime_error("write failed for " + tmp.string() + " (disk full?)");
    }
    std::filesystem::rename(tmp, path);
}

Archive read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode(ss.str());
}

}  // namespace vstain::archive
