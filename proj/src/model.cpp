#include "pano/model.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pano/pt36.hpp"

namespace pano {

TensorF& ParamRegistry::add(const std::string& name, TensorF init) {
  if (index.count(name)) throw std::invalid_argument("ParamRegistry: duplicate name " + name);
  index[name] = static_cast<int>(values.size());
  names.push_back(name);
  values.push_back(std::move(init));
  return values.back();
}

TensorF& ParamRegistry::get(const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) throw std::out_of_range("ParamRegistry: no parameter " + name);
  return values[static_cast<size_t>(it->second)];
}

const TensorF& ParamRegistry::get(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw std::out_of_range("ParamRegistry: no parameter " + name);
  return values[static_cast<size_t>(it->second)];
}

int64_t ParamRegistry::total_params() const {
  int64_t n = 0;
  for (const TensorF& t : values) n += t.numel();
  return n;
}

void ParamRegistry::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(dir + "/params.txt", std::ios::trunc);
  if (!manifest) throw std::runtime_error("ParamRegistry: cannot write " + dir + "/params.txt");
  for (size_t i = 0; i < values.size(); ++i) {
    char file[32];
    std::snprintf(file, sizeof file, "p%05zu.pt36", i);
    manifest << names[i] << " " << file;
    for (int d : values[i].dims) manifest << " " << d;
    manifest << "\n";
    write_pt36(dir + "/" + file, values[i]);
  }
}

void ParamRegistry::load(const std::string& dir) {
  std::ifstream manifest(dir + "/params.txt");
  if (!manifest)
    throw std::runtime_error("ParamRegistry: no checkpoint manifest at " + dir + "/params.txt");
  std::string line;
  size_t count = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name, file;
    ss >> name >> file;
    auto it = index.find(name);
    if (it == index.end())
      throw std::runtime_error("ParamRegistry: checkpoint has unknown parameter " + name);
    TensorF t = read_pt36(dir + "/" + file);
    TensorF& dst = values[static_cast<size_t>(it->second)];
    if (t.dims != dst.dims)
      throw std::runtime_error("ParamRegistry: shape mismatch for " + name + ": checkpoint " +
                               shape_str(t.dims) + " vs model " + shape_str(dst.dims));
    dst = std::move(t);
    ++count;
  }
  if (count != values.size())
    throw std::runtime_error("ParamRegistry: checkpoint lists " + std::to_string(count) +
                             " parameters, model has " + std::to_string(values.size()));
}

TensorF init_conv(int out_c, int in_c, int kh, int kw, Rng& rng, double gain) {
  const double std_dev = gain * std::sqrt(2.0 / (in_c * kh * kw));
  return randn<float>({out_c, in_c, kh, kw}, rng, std_dev);
}

TensorF init_linear(int out_d, int in_d, Rng& rng, double gain) {
  const double std_dev = gain * std::sqrt(2.0 / in_d);
  return randn<float>({out_d, in_d}, rng, std_dev);
}

TensorF init_zeros(std::vector<int> dims) { return TensorF(dims, 0.0f); }
TensorF init_ones(std::vector<int> dims) { return TensorF(dims, 1.0f); }

TensorF init_normal(std::vector<int> dims, Rng& rng, double std_dev) {
  return randn<float>(dims, rng, std_dev);
}

void Adam::init(const ParamRegistry& reg) {
  t = 0;
  m.clear();
  v.clear();
  for (const TensorF& p : reg.values) {
    m.push_back(TensorF(p.dims, 0.0f));
    v.push_back(TensorF(p.dims, 0.0f));
  }
}

void Adam::step(ParamRegistry& reg, const std::vector<TensorF>& grads,
                const std::vector<std::string>& frozen) {
  if (grads.size() != reg.values.size())
    throw std::invalid_argument("Adam: gradient list size mismatch");
  if (m.size() != reg.values.size()) throw std::logic_error("Adam: not initialized");
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < reg.values.size(); ++i) {
    bool skip = false;
    for (const std::string& f : frozen)
      if (reg.names[i].rfind(f, 0) == 0) {
        skip = true;
        break;
      }
    if (skip) continue;
    TensorF& p = reg.values[i];
    const TensorF& g = grads[i];
    if (g.dims != p.dims)
      throw std::invalid_argument("Adam: gradient shape mismatch for " + reg.names[i]);
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double gj = g[j];
      const double mj = beta1 * m[i][j] + (1.0 - beta1) * gj;
      const double vj = beta2 * v[i][j] + (1.0 - beta2) * gj * gj;
      m[i][j] = static_cast<float>(mj);
      v[i][j] = static_cast<float>(vj);
      const double mhat = mj / bc1, vhat = vj / bc2;
      p[j] = static_cast<float>(p[j] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

}  // namespace pano
