#include "synprune/checkpoint.hpp"

#include <cstring>
#include <map>
#include <stdexcept>
#include <vector>

#include "wire.hpp"

namespace synprune {

namespace {

constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;  // reserved for 64-bit payloads
constexpr std::uint8_t kDtypeBitset = 2;

struct Record {
  std::uint8_t dtype = kDtypeF32;
  std::vector<std::size_t> shape;
  std::vector<float> floats;
  std::vector<std::uint8_t> bits;  // unpacked 0/1 per logical entry
};

using wire::Reader;
using wire::Writer;

void write_tensor_record(Writer& w, const std::string& name, const Tensor& t) {
  w.str(name);
  w.u8(kDtypeF32);
  w.u32(std::uint32_t(t.rank()));
  for (std::size_t i = 0; i < t.rank(); ++i) w.u64(t.dim(i));
  for (std::size_t i = 0; i < t.size(); ++i) w.f32(t[i]);
}

void write_bitset_record(Writer& w, const std::string& name, const ad::KernelMask& m,
                         std::size_t rows, std::size_t cols) {
  w.str(name);
  w.u8(kDtypeBitset);
  w.u32(2);
  w.u64(rows);
  w.u64(cols);
  std::vector<std::uint8_t> packed((m.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) packed[i / 8] |= std::uint8_t(1u << (i % 8));
  w.bytes(packed);
}

Record read_record(Reader& r, std::string& name) {
  name = r.str();
  Record rec;
  rec.dtype = r.u8();
  const std::uint32_t rank = r.u32();
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    rec.shape.push_back(std::size_t(r.u64()));
    count *= rec.shape.back();
  }
  if (rec.dtype == kDtypeF32) {
    rec.floats.resize(count);
    for (std::size_t i = 0; i < count; ++i) rec.floats[i] = r.f32();
  } else if (rec.dtype == kDtypeBitset) {
    auto packed = r.take((count + 7) / 8);
    rec.bits.resize(count);
    for (std::size_t i = 0; i < count; ++i) rec.bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  } else {
    throw std::runtime_error("checkpoint: unsupported dtype tag " + std::to_string(rec.dtype));
  }
  return rec;
}

void fill_param(const std::map<std::string, Record>& records, ad::Param& p) {
  auto it = records.find(p.name);
  if (it == records.end()) throw std::runtime_error("checkpoint: missing record " + p.name);
  const Record& rec = it->second;
  if (rec.dtype != kDtypeF32 || rec.shape != p.value.shape())
    throw std::runtime_error("checkpoint: record " + p.name + " has mismatched shape or dtype");
  for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = rec.floats[i];
}

Tensor take_tensor(const std::map<std::string, Record>& records, const std::string& name) {
  auto it = records.find(name);
  if (it == records.end()) throw std::runtime_error("checkpoint: missing record " + name);
  if (it->second.dtype != kDtypeF32)
    throw std::runtime_error("checkpoint: record " + name + " is not a float tensor");
  return Tensor(it->second.shape, it->second.floats);
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  Writer w(path, "checkpoint");
  w.bytes({'S', 'Y', 'N', 'P'});
  w.u32(kCheckpointVersion);
  w.str(model.spec().name);
  w.u32(std::uint32_t(model.spec().in_channels));
  w.u32(std::uint32_t(model.spec().num_classes));
  w.u8(model.flags().fix_gamma ? 1 : 0);
  w.u8(model.flags().kernel_norm ? 1 : 0);

  std::uint32_t records = 0;
  for (const auto& c : model.convs) records += 2 + (c.strengths.value.empty() ? 0 : 1);
  for (const auto& b : model.bns) records += 3 + (b.log_gamma.value.empty() ? 0 : 1);
  records += 2;
  w.u32(records);

  for (std::size_t i = 0; i < model.convs.size(); ++i) {
    const auto& c = model.convs[i];
    write_tensor_record(w, c.weights.name, c.weights.value);
    if (!c.strengths.value.empty()) write_tensor_record(w, c.strengths.name, c.strengths.value);
    write_bitset_record(w, "conv" + std::to_string(i) + ".mask", c.mask, c.out_channels,
                        c.in_channels);
  }
  for (std::size_t i = 0; i < model.bns.size(); ++i) {
    const auto& b = model.bns[i];
    write_tensor_record(w, b.beta.name, b.beta.value);
    if (!b.log_gamma.value.empty()) write_tensor_record(w, b.log_gamma.name, b.log_gamma.value);
    write_tensor_record(w, "bn" + std::to_string(i) + ".run_mean", b.running.mean);
    write_tensor_record(w, "bn" + std::to_string(i) + ".run_var", b.running.var);
  }
  write_tensor_record(w, model.fc.w.name, model.fc.w.value);
  write_tensor_record(w, model.fc.b.name, model.fc.b.value);
  w.close(path);
}

Model load_checkpoint(const std::string& path) {
  Reader r(path, "checkpoint");
  const auto magic = r.take(4);
  if (magic != std::vector<std::uint8_t>{'S', 'Y', 'N', 'P'})
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const std::string spec_name = r.str();
  const std::size_t in_ch = r.u32();
  const std::size_t classes = r.u32();
  VariantFlags flags;
  flags.fix_gamma = r.u8() != 0;
  flags.kernel_norm = r.u8() != 0;
  const std::uint32_t count = r.u32();

  std::map<std::string, Record> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    Record rec = read_record(r, name);
    records.emplace(std::move(name), std::move(rec));
  }

  Model model(spec_by_name(spec_name, in_ch, classes), flags, 0);
  for (std::size_t i = 0; i < model.convs.size(); ++i) {
    auto& c = model.convs[i];
    fill_param(records, c.weights);
    if (!c.strengths.value.empty()) fill_param(records, c.strengths);
    auto it = records.find("conv" + std::to_string(i) + ".mask");
    if (it == records.end())
      throw std::runtime_error("checkpoint: missing record conv" + std::to_string(i) + ".mask");
    const Record& rec = it->second;
    if (rec.dtype != kDtypeBitset || rec.bits.size() != c.mask.size())
      throw std::runtime_error("checkpoint: bad mask record for conv" + std::to_string(i));
    c.mask.assign(rec.bits.begin(), rec.bits.end());
  }
  for (std::size_t i = 0; i < model.bns.size(); ++i) {
    auto& b = model.bns[i];
    fill_param(records, b.beta);
    if (!b.log_gamma.value.empty()) fill_param(records, b.log_gamma);
    b.running.mean = take_tensor(records, "bn" + std::to_string(i) + ".run_mean");
    b.running.var = take_tensor(records, "bn" + std::to_string(i) + ".run_var");
  }
  fill_param(records, model.fc.w);
  fill_param(records, model.fc.b);
  return model;
}

}  // namespace synprune
