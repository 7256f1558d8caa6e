#include "slidegcd/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "slidegcd/error.hpp"
#include "slidegcd/rng.hpp"

namespace slidegcd {

void Dataset::validate() const {
  std::vector<int> seen(bags.size(), 0);
  for (const auto* split : {&train, &val, &test}) {
    for (std::size_t i : *split) {
      if (i >= bags.size()) throw InputError("dataset split references missing bag " + std::to_string(i));
      if (seen[i]++) throw InputError("dataset splits overlap at bag '" + bags[i].slide_id + "'");
    }
  }
  for (std::size_t i = 0; i < bags.size(); ++i) {
    if (!seen[i]) throw InputError("bag '" + bags[i].slide_id + "' is in no split");
    const auto& b = bags[i];
    if (b.embeddings.rows() == 0) throw InputError("bag '" + b.slide_id + "' has no patches");
    if (b.label < 0 || b.label >= num_classes) {
      throw InputError("bag '" + b.slide_id + "' label " + std::to_string(b.label) +
                       " outside [0, " + std::to_string(num_classes) + ")");
    }
    if (b.embeddings.cols() != patch_dim()) {
      throw InputError("bag '" + b.slide_id + "' has patch dim " +
                       std::to_string(b.embeddings.cols()) + ", expected " +
                       std::to_string(patch_dim()));
    }
  }
  std::vector<int> present(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (std::size_t i : train) present[static_cast<std::size_t>(bags[i].label)] = 1;
  for (int c = 0; c < num_classes; ++c) {
    if (!present[static_cast<std::size_t>(c)]) {
      throw InputError("class " + std::to_string(c) + " missing from train split");
    }
  }
}

void SyntheticSpec::validate() const {
  if (num_classes < 1) throw InputError("synthetic spec: num_classes must be >= 1");
  if (slides_per_class < 1) throw InputError("synthetic spec: slides_per_class must be >= 1");
  if (patch_dim < 1) throw InputError("synthetic spec: patch_dim must be >= 1");
  if (min_patches < 1 || max_patches < min_patches) {
    throw InputError("synthetic spec: need 1 <= min_patches <= max_patches");
  }
  if (!(signal_fraction >= 0.0 && signal_fraction <= 1.0)) {
    throw InputError("synthetic spec: signal_fraction must lie in [0, 1]");
  }
  if (noise_scale < 0.0 || class_separation < 0.0) {
    throw InputError("synthetic spec: scales must be non-negative");
  }
  if (val_per_class < 0 || test_per_class < 0 ||
      val_per_class + test_per_class >= slides_per_class) {
    throw InputError("synthetic spec: val+test per class must leave at least one train slide");
  }
}

namespace {

std::vector<double> random_mean(Rng& rng, int dim, double norm) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double s = 0.0;
  for (double& x : v) {
    x = rng.normal();
    s += x * x;
  }
  s = std::sqrt(s);
  for (double& x : v) x = s > 0.0 ? x / s * norm : 0.0;
  return v;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto dim = static_cast<std::size_t>(spec.patch_dim);

  const std::vector<double> background = random_mean(rng, spec.patch_dim, spec.class_separation);
  std::vector<std::vector<double>> class_means;
  for (int c = 0; c < spec.num_classes; ++c) {
    class_means.push_back(random_mean(rng, spec.patch_dim, spec.class_separation));
  }

  Dataset ds;
  ds.num_classes = spec.num_classes;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < spec.slides_per_class; ++i) {
      const auto span = static_cast<std::uint64_t>(spec.max_patches - spec.min_patches + 1);
      const auto m = static_cast<std::size_t>(spec.min_patches) + rng.below(span);
      const auto n_signal =
          static_cast<std::size_t>(std::lround(spec.signal_fraction * static_cast<double>(m)));
      std::vector<std::size_t> order(m);
      for (std::size_t r = 0; r < m; ++r) order[r] = r;
      rng.shuffle(order);

      PatchBag bag;
      char id[48];
      std::snprintf(id, sizeof id, "syn_c%d_%04d", c, i);
      bag.slide_id = id;
      bag.label = c;
      bag.embeddings = MatrixF(m, dim);
      for (std::size_t r = 0; r < m; ++r) {
        const auto& mu = order[r] < n_signal ? class_means[static_cast<std::size_t>(c)] : background;
        for (std::size_t j = 0; j < dim; ++j) {
          bag.embeddings(r, j) = static_cast<float>(mu[j] + spec.noise_scale * rng.normal());
        }
      }

      const std::size_t index = ds.bags.size();
      if (i < spec.test_per_class) {
        ds.test.push_back(index);
      } else if (i < spec.test_per_class + spec.val_per_class) {
        ds.val.push_back(index);
      } else {
        ds.train.push_back(index);
      }
      ds.bags.push_back(std::move(bag));
    }
  }
  return ds;
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_bag_file(const PatchBag& bag, const std::filesystem::path& path) {
  std::string out;
  out.reserve(kBagHeaderBytes + bag.embeddings.size() * 4);
  out.append(kBagMagic, 4);
  put_u32(out, kBagVersion);
  put_u32(out, static_cast<std::uint32_t>(bag.embeddings.rows()));
  put_u32(out, static_cast<std::uint32_t>(bag.embeddings.cols()));
  for (float v : bag.embeddings.storage()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

PatchBag load_bag_file(const std::filesystem::path& path, std::string slide_id, int label) {
  const std::string bytes = read_all(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = "bag file '" + path.string() + "'";
  if (bytes.size() < kBagHeaderBytes) {
    throw FormatError(where + ": truncated header at offset " + std::to_string(bytes.size()) +
                      " (need 16 bytes)");
  }
  if (std::memcmp(p, kBagMagic, 4) != 0) throw FormatError(where + ": bad magic at offset 0");
  const std::uint32_t version = get_u32(p + 4);
  if (version != kBagVersion) {
    throw FormatError(where + ": unsupported version " + std::to_string(version) +
                      " at offset 4");
  }
  const std::uint32_t m = get_u32(p + 8);
  const std::uint32_t d = get_u32(p + 12);
  const std::uint64_t need = kBagHeaderBytes + static_cast<std::uint64_t>(m) * d * 4;
  if (bytes.size() != need) {
    throw FormatError(where + ": payload at offset 16 holds " +
                      std::to_string(bytes.size() - kBagHeaderBytes) + " bytes, expected " +
                      std::to_string(need - kBagHeaderBytes));
  }
  PatchBag bag;
  bag.slide_id = slide_id.empty() ? path.stem().string() : std::move(slide_id);
  bag.label = label;
  bag.embeddings = MatrixF(m, d);
  for (std::size_t i = 0; i < bag.embeddings.size(); ++i) {
    bag.embeddings[i] = std::bit_cast<float>(get_u32(p + kBagHeaderBytes + 4 * i));
  }
  return bag;
}

std::vector<ManifestRecord> parse_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::vector<ManifestRecord> records;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (line.front() == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw FormatError(where + ": expected 3 tab-separated fields slide_id, path, label");
    }
    int label = 0;
    std::size_t consumed = 0;
    try {
      label = std::stoi(fields[2], &consumed);
    } catch (const std::exception&) {
      consumed = 0;
    }
    if (consumed == 0 || consumed != fields[2].size() || label < 0) {
      throw FormatError(where + ": label '" + fields[2] + "' is not a non-negative integer");
    }
    if (!ids.insert(fields[0]).second) {
      throw FormatError(where + ": duplicate slide_id '" + fields[0] + "'");
    }
    records.push_back({fields[0], fields[1], label});
  }
  return records;
}

void write_manifest(const std::vector<ManifestRecord>& records,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open manifest '" + path.string() + "' for writing");
  out << "# slide_id\tpath\tlabel\n";
  for (const auto& r : records) out << r.slide_id << '\t' << r.path << '\t' << r.label << '\n';
}

std::vector<PatchBag> load_manifest_bags(const std::filesystem::path& manifest) {
  std::vector<PatchBag> bags;
  const auto base = manifest.parent_path();
  for (const auto& rec : parse_manifest(manifest)) {
    std::filesystem::path p(rec.path);
    if (p.is_relative()) p = base / p;
    bags.push_back(load_bag_file(p, rec.slide_id, rec.label));
  }
  return bags;
}

Dataset dataset_from_manifests(const std::filesystem::path& train,
                               const std::filesystem::path& val,
                               const std::filesystem::path& test, int num_classes) {
  Dataset ds;
  ds.num_classes = num_classes;
  auto append = [&](const std::filesystem::path& m, std::vector<std::size_t>& split) {
    if (m.empty()) return;
    for (auto& bag : load_manifest_bags(m)) {
      split.push_back(ds.bags.size());
      ds.bags.push_back(std::move(bag));
    }
  };
  append(train, ds.train);
  append(val, ds.val);
  append(test, ds.test);
  ds.validate();
  return ds;
}

}  // namespace slidegcd
