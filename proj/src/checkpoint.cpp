#include "freqlab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace freqlab {

namespace {

constexpr char kMagic[8] = {'F', 'Q', 'L', 'T', 'N', 'S', 'R', '1'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw Error("tensor container truncated reading " + std::string(what) + " at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_tensors(const std::vector<NamedTensor>& tensors) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.tensor.rank()));
    for (std::size_t d : t.tensor.shape()) put<std::uint64_t>(out, d);
  }
  for (const auto& t : tensors) {
    const auto data = t.tensor.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  }
  return out;
}

std::vector<NamedTensor> decode_tensors(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic)) throw Error("tensor container: bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) throw Error("tensor container: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>("count");
  std::vector<std::pair<std::string, Shape>> headers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name = r.take(len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 16) throw Error("tensor container: implausible rank at byte " + std::to_string(r.pos()));
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>("extent"));
    headers.emplace_back(std::move(name), std::move(shape));
  }
  std::vector<NamedTensor> out;
  for (auto& [name, shape] : headers) {
    const std::size_t n = numel(shape);
    if (r.remaining() / sizeof(double) < n) {
      throw Error("tensor container truncated in payload of '" + name + "' at byte " + std::to_string(r.pos()));
    }
    std::vector<double> data(n);
    const std::string raw = r.take(n * sizeof(double), "payload");
    std::memcpy(data.data(), raw.data(), raw.size());
    out.push_back({name, Tensor(shape, std::move(data))});
  }
  if (r.remaining() != 0) throw Error("tensor container: trailing bytes at " + std::to_string(r.pos()));
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed for " + path);
}

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  write_file(path, encode_tensors(tensors));
}

std::vector<NamedTensor> load_tensors(const std::string& path) { return decode_tensors(read_file(path)); }

}  // namespace freqlab
