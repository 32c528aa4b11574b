#include "loco/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <sstream>

namespace loco {

namespace {

constexpr char kCkptMagic[4] = {'L', 'C', 'K', 'P'};
constexpr char kReplayMagic[4] = {'L', 'R', 'P', 'L'};

void wr_u32(std::ostream& o, std::uint32_t v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void wr_u64(std::ostream& o, std::uint64_t v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void wr_f64s(std::ostream& o, std::span<const double> v) {
  o.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::uint32_t rd_u32(std::istream& i) {
  std::uint32_t v = 0;
  i.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t rd_u64(std::istream& i) {
  std::uint64_t v = 0;
  i.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

struct Entry {
  std::string name;
  Shape dims;
  std::vector<double> data;
};

// named arrays in save order; adam moments mirror the parameter names
std::vector<Entry> checkpoint_entries(const GaussianPolicy& policy, const Adam& opt,
                                      const CheckpointMeta& meta) {
  std::vector<Entry> out;
  for (const auto& [name, t] : policy.net.named_params())
    out.push_back({"param." + name, t.shape(),
                   std::vector<double>(t.values().begin(), t.values().end())});

  std::vector<NamedParams> group_names = {policy.net.policy_params(),
                                          policy.net.value_params()};
  const auto& groups = opt.groups();
  if (groups.size() != group_names.size())
    throw RuntimeFault("optimizer layout does not match the policy");
  for (size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].params.size() != group_names[g].size())
      throw RuntimeFault("optimizer group size does not match the policy");
    for (size_t k = 0; k < groups[g].params.size(); ++k) {
      const std::string& pname = group_names[g][k].first;
      const Tensor& p = groups[g].params[k];
      size_t n = static_cast<size_t>(p.numel());
      const AdamState& st = groups[g].states[k];
      std::vector<double> m = st.m.empty() ? std::vector<double>(n, 0.0) : st.m;
      std::vector<double> v = st.v.empty() ? std::vector<double>(n, 0.0) : st.v;
      out.push_back({"adam.m." + pname, p.shape(), std::move(m)});
      out.push_back({"adam.v." + pname, p.shape(), std::move(v)});
    }
  }

  auto split64 = [](std::uint64_t v) {
    return std::vector<double>{static_cast<double>(v >> 32),
                               static_cast<double>(v & 0xffffffffull)};
  };
  out.push_back({"meta.update_idx", {1}, {static_cast<double>(meta.update_idx)}});
  out.push_back({"meta.env_steps", {1}, {static_cast<double>(meta.env_steps)}});
  out.push_back({"meta.adam_step", {1}, {static_cast<double>(meta.adam_step)}});
  out.push_back({"meta.config_hash", {2}, split64(meta.config_hash)});
  out.push_back({"meta.master_seed", {2}, split64(meta.master_seed)});
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const GaussianPolicy& policy,
                     const Adam& opt, const CheckpointMeta& meta) {
  std::vector<Entry> entries = checkpoint_entries(policy, opt, meta);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeFault("cannot write checkpoint: " + path);
  f.write(kCkptMagic, 4);
  wr_u32(f, 1);
  wr_u32(f, static_cast<std::uint32_t>(entries.size()));

  std::uint64_t offset = 0;
  for (const Entry& e : entries) {
    wr_u32(f, static_cast<std::uint32_t>(e.name.size()));
    f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    wr_u32(f, static_cast<std::uint32_t>(e.dims.size()));
    for (int d : e.dims) wr_u32(f, static_cast<std::uint32_t>(d));
    wr_u64(f, offset);
    offset += e.data.size();
  }
  for (const Entry& e : entries) wr_f64s(f, e.data);
  if (!f) throw RuntimeFault("checkpoint write failed: " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, GaussianPolicy& policy,
                               Adam& opt) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeFault("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw RuntimeFault("not a checkpoint file: " + path);
  if (rd_u32(f) != 1) throw RuntimeFault("unsupported checkpoint version");

  struct Rec {
    Shape dims;
    std::uint64_t offset;
    std::size_t count;
  };
  std::uint32_t n_entries = rd_u32(f);
  std::map<std::string, Rec> manifest;
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    std::uint32_t name_len = rd_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    std::uint32_t ndim = rd_u32(f);
    Rec rec;
    rec.count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      rec.dims.push_back(static_cast<int>(rd_u32(f)));
      rec.count *= static_cast<std::size_t>(rec.dims.back());
    }
    rec.offset = rd_u64(f);
    manifest[name] = rec;
    order.push_back(name);
  }
  if (!f) throw RuntimeFault("truncated checkpoint manifest: " + path);
  std::streampos data_start = f.tellg();

  auto fetch = [&](const std::string& name, const Shape* expect) {
    auto it = manifest.find(name);
    if (it == manifest.end())
      throw RuntimeFault("checkpoint is missing entry: " + name);
    if (expect && it->second.dims != *expect)
      throw RuntimeFault("checkpoint shape mismatch for " + name + ": file has " +
                         shape_to_string(it->second.dims) + ", expected " +
                         shape_to_string(*expect));
    std::vector<double> data(it->second.count);
    f.seekg(data_start + static_cast<std::streamoff>(it->second.offset * sizeof(double)));
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!f) throw RuntimeFault("truncated checkpoint data: " + path);
    return data;
  };

  for (auto& [name, t] : policy.net.named_params()) {
    Shape s = t.shape();
    std::vector<double> data = fetch("param." + name, &s);
    std::copy(data.begin(), data.end(), t.values_mut().begin());
  }

  std::vector<NamedParams> group_names = {policy.net.policy_params(),
                                          policy.net.value_params()};
  auto& groups = opt.groups();
  if (groups.size() != group_names.size())
    throw RuntimeFault("optimizer layout does not match the policy");
  for (size_t g = 0; g < groups.size(); ++g) {
    for (size_t k = 0; k < groups[g].params.size(); ++k) {
      const std::string& pname = group_names[g][k].first;
      Shape s = groups[g].params[k].shape();
      groups[g].states[k].m = fetch("adam.m." + pname, &s);
      groups[g].states[k].v = fetch("adam.v." + pname, &s);
    }
  }

  auto join64 = [](const std::vector<double>& v) {
    return (static_cast<std::uint64_t>(v.at(0)) << 32) |
           static_cast<std::uint64_t>(v.at(1));
  };
  CheckpointMeta meta;
  meta.update_idx = static_cast<long long>(fetch("meta.update_idx", nullptr).at(0));
  meta.env_steps = static_cast<long long>(fetch("meta.env_steps", nullptr).at(0));
  meta.adam_step = static_cast<long long>(fetch("meta.adam_step", nullptr).at(0));
  meta.config_hash = join64(fetch("meta.config_hash", nullptr));
  meta.master_seed = join64(fetch("meta.master_seed", nullptr));
  opt.set_step_count(meta.adam_step);
  return meta;
}

void save_replay(const std::string& path, const ReplayFile& replay) {
  if (replay.action_dim < 1 ||
      replay.actions.size() % static_cast<size_t>(replay.action_dim) != 0)
    throw RuntimeFault("replay action buffer is not a whole number of steps");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeFault("cannot write replay: " + path);
  f.write(kReplayMagic, 4);
  wr_u32(f, 1);
  wr_u64(f, replay.seed);
  wr_u32(f, static_cast<std::uint32_t>(replay.action_dim));
  wr_u64(f, replay.actions.size());
  wr_u32(f, static_cast<std::uint32_t>(replay.config_text.size()));
  f.write(replay.config_text.data(),
          static_cast<std::streamsize>(replay.config_text.size()));
  wr_f64s(f, replay.actions);
  if (!f) throw RuntimeFault("replay write failed: " + path);
}

ReplayFile load_replay(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeFault("cannot open replay: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kReplayMagic, 4) != 0)
    throw RuntimeFault("not a replay file: " + path);
  if (rd_u32(f) != 1) throw RuntimeFault("unsupported replay version");
  ReplayFile r;
  r.seed = rd_u64(f);
  r.action_dim = static_cast<int>(rd_u32(f));
  std::uint64_t count = rd_u64(f);
  std::uint32_t cfg_len = rd_u32(f);
  r.config_text.resize(cfg_len);
  f.read(r.config_text.data(), cfg_len);
  r.actions.resize(count);
  f.read(reinterpret_cast<char*>(r.actions.data()),
         static_cast<std::streamsize>(count * sizeof(double)));
  if (!f) throw RuntimeFault("truncated replay file: " + path);
  if (r.action_dim < 1 || count % r.action_dim != 0)
    throw RuntimeFault("corrupt replay file: " + path);
  return r;
}

void write_pgm(const std::string& path, std::span<const double> vals, int width,
               int height) {
  if (static_cast<size_t>(width) * height != vals.size())
    throw ShapeError("pgm dimensions do not match the pixel count");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeFault("cannot write image: " + path);
  f << "P5\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> bytes(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) {
    double v = std::clamp(vals[i], 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw RuntimeFault("image write failed: " + path);
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& columns,
                     int schema_version, bool append)
    : columns_(columns.size()) {
  bool existing = false;
  if (append) {
    std::ifstream probe(path);
    existing = probe.good() && probe.peek() != std::ifstream::traits_type::eof();
  }
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw RuntimeFault("cannot write csv: " + path);
  if (!existing) {
    out_ << "# schema " << schema_version << "\n";
    for (size_t i = 0; i < columns.size(); ++i)
      out_ << columns[i] << (i + 1 < columns.size() ? "," : "\n");
  }
}

void CsvWriter::row(std::span<const double> vals) {
  if (vals.size() != columns_)
    throw ShapeError("csv row width does not match the header");
  char buf[64];
  for (size_t i = 0; i < vals.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", vals[i]);
    out_ << buf << (i + 1 < vals.size() ? "," : "\n");
  }
}

void CsvWriter::flush() { out_.flush(); }

std::vector<std::vector<double>> read_csv(const std::string& path,
                                          std::vector<std::string>* header) {
  std::ifstream f(path);
  if (!f) throw RuntimeFault("cannot open csv: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string cell;
    if (!header_seen) {
      header_seen = true;
      if (header) {
        while (std::getline(ss, cell, ',')) header->push_back(cell);
      }
      continue;
    }
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace loco
