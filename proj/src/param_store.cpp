#include "relnet/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace relnet {

template <typename Scalar>
std::size_t ParamStore<Scalar>::add(const std::string& name, std::vector<int> shape, Eigen::Index rows,
                                    Eigen::Index cols) {
  if (index_.count(name) != 0) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  index_[name] = params_.size();
  params_.push_back({name, std::move(shape), RowMatrix<Scalar>::Zero(rows, cols)});
  return params_.size() - 1;
}

template <typename Scalar>
std::size_t ParamStore<Scalar>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return it->second;
}

template <typename Scalar>
std::size_t ParamStore<Scalar>::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename Scalar>
bool ParamStore<Scalar>::all_finite() const {
  for (const auto& p : params_) {
    if (!p.value.allFinite()) return false;
  }
  return true;
}

template <typename Scalar>
ParamStore<Scalar> ParamStore<Scalar>::zeros_like() const {
  ParamStore out(arch_hash_);
  for (const auto& p : params_) out.add(p.name, p.shape, p.value.rows(), p.value.cols());
  return out;
}

template <typename Scalar>
void ParamStore<Scalar>::set_zero() {
  for (auto& p : params_) p.value.setZero();
}

template <typename Scalar>
void ParamStore<Scalar>::add_scaled(const ParamStore& other, Scalar scale) {
  if (other.size() != size()) throw std::invalid_argument("add_scaled: layout mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value += scale * other.params_[i].value;
}

template <typename Scalar>
Scalar ParamStore<Scalar>::flat(std::size_t k) const {
  for (const auto& p : params_) {
    auto n = static_cast<std::size_t>(p.value.size());
    if (k < n) return p.value.data()[k];
    k -= n;
  }
  throw std::out_of_range("flat index out of range");
}

template <typename Scalar>
Scalar& ParamStore<Scalar>::flat(std::size_t k) {
  for (auto& p : params_) {
    auto n = static_cast<std::size_t>(p.value.size());
    if (k < n) return p.value.data()[k];
    k -= n;
  }
  throw std::out_of_range("flat index out of range");
}

template <typename Scalar>
bool ParamStore<Scalar>::operator==(const ParamStore& other) const {
  if (arch_hash_ != other.arch_hash_ || params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.shape != b.shape || a.value.rows() != b.value.rows() ||
        a.value.cols() != b.value.cols()) {
      return false;
    }
    if (std::memcmp(a.value.data(), b.value.data(), sizeof(Scalar) * static_cast<std::size_t>(a.value.size())) != 0) {
      return false;
    }
  }
  return true;
}

template class ParamStore<float>;
template class ParamStore<double>;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

namespace {

std::string join_shape(const std::vector<int>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

std::vector<int> parse_shape(const std::string& s) {
  std::vector<int> shape;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(std::stoi(part));
  return shape;
}

void put_le32(std::ostream& os, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

float get_le32(const unsigned char* b) {
  std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                       (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace

void save_checkpoint(const ParamStore<float>& params, const std::filesystem::path& dir, const std::string& kind) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  std::ofstream blob(dir / "params.bin", std::ios::binary);
  if (!manifest || !blob) throw std::runtime_error("cannot write checkpoint at " + dir.string());

  manifest << "relnet-checkpoint 1 kind=" << kind << " arch=" << params.arch_hash() << " count=" << params.size()
           << "\n";
  std::size_t offset = 0;
  for (const auto& p : params) {
    manifest << p.name << ' ' << join_shape(p.shape) << " f32 " << offset << "\n";
    // row-major order, which is the matrices' storage order
    for (Eigen::Index i = 0; i < p.value.size(); ++i) put_le32(blob, p.value.data()[i]);
    offset += 4 * static_cast<std::size_t>(p.value.size());
  }
  if (!manifest || !blob) throw std::runtime_error("I/O error writing checkpoint at " + dir.string());
}

ParamStore<float> load_checkpoint(const std::filesystem::path& dir, const std::string& kind) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("missing checkpoint manifest: " + (dir / "manifest.txt").string());
  std::ifstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw std::runtime_error("missing checkpoint data: " + (dir / "params.bin").string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());

  std::string header;
  std::getline(manifest, header);
  std::istringstream hs(header);
  std::string magic, version, kind_tok, arch_tok;
  hs >> magic >> version >> kind_tok >> arch_tok;
  if (magic != "relnet-checkpoint") throw std::runtime_error("not a checkpoint manifest: " + dir.string());
  if (kind_tok != "kind=" + kind) {
    throw std::runtime_error("checkpoint kind mismatch in " + dir.string() + ": expected " + kind + ", found " +
                             kind_tok);
  }
  ParamStore<float> params(arch_tok.substr(arch_tok.find('=') + 1));

  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, shape_s, dtype;
    std::size_t offset = 0;
    ls >> name >> shape_s >> dtype >> offset;
    if (dtype != "f32") throw std::runtime_error("unsupported dtype for " + name + ": " + dtype);
    auto shape = parse_shape(shape_s);
    Eigen::Index rows = shape.empty() ? 1 : shape[0];
    Eigen::Index cols = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) cols *= shape[i];
    auto idx = params.add(name, shape, rows, cols);
    auto n = static_cast<std::size_t>(rows * cols);
    if (offset + 4 * n > bytes.size()) throw std::runtime_error("checkpoint data truncated at " + name);
    for (std::size_t i = 0; i < n; ++i) params.value(idx).data()[i] = get_le32(bytes.data() + offset + 4 * i);
  }
  return params;
}

Adam::Adam(const ParamStore<float>& like, Options opts) : opts_(opts), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::step(ParamStore<float>& params, const ParamStore<float>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  const float step = static_cast<float>(opts_.lr * std::sqrt(bc2) / bc1);
  const auto b1 = static_cast<float>(opts_.beta1);
  const auto b2 = static_cast<float>(opts_.beta2);
  const auto eps = static_cast<float>(opts_.eps * std::sqrt(bc2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = m_.value(i);
    auto& v = v_.value(i);
    const auto& g = grads.value(i);
    m = b1 * m + (1.0f - b1) * g;
    v.array() = b2 * v.array() + (1.0f - b2) * g.array().square();
    params.value(i).array() -= step * m.array() / (v.array().sqrt() + eps);
  }
}

}  // namespace relnet
