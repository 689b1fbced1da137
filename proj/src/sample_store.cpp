// CSV-backed sample store: one sparse `split,sample,step,row,col,value` file
// per matrix family plus manifest.json. Every file starts with a
// `# schema_version=N` line.

#include <array>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "json.hpp"

#include "hiam/aggregation.hpp"
#include "hiam/error.hpp"

namespace hiam {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::string kSchemaLine = "# schema_version=" + std::to_string(kStoreSchemaVersion);

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

void expect_schema(std::istream& in, const fs::path& path) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# schema_version=", 0) != 0) {
    throw Error(ErrorKind::Parse, path.string() + ":1: missing schema_version line");
  }
  if (line != kSchemaLine) {
    throw Error(ErrorKind::SchemaVersion,
                path.string() + ": store has '" + line + "', expected '" + kSchemaLine +
                    "'; re-run preprocess to migrate");
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << kSchemaLine << '\n';
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  expect_schema(in, path);
  return in;
}

void write_map(const Eigen::MatrixXi& map, const fs::path& path) {
  auto out = open_out(path);
  for (Eigen::Index i = 0; i < map.rows(); ++i) {
    for (Eigen::Index c = 0; c < map.cols(); ++c) {
      out << (c ? "," : "") << map(i, c);
    }
    out << '\n';
  }
}

Eigen::MatrixXi read_map(const fs::path& path) {
  auto in = open_in(path);
  std::vector<std::vector<int>> rows;
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<int> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      int v = 0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || p != cell.data() + cell.size()) {
        throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(line_no) +
                                          ": bad integer '" + cell + "'");
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(line_no) +
                                        ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorKind::Parse, path.string() + ": empty map");
  Eigen::MatrixXi map(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) map(i, c) = rows[i][c];
  }
  return map;
}

constexpr std::array<const char*, 3> kSplits{"train", "val", "test"};

// A matrix family is either a per-input or a per-target member.
struct Family {
  const char* file;
  Matrix SampleInput::*input = nullptr;
  Matrix SampleTarget::*target = nullptr;

  std::size_t steps(const SnapshotSample& s) const {
    return input ? s.inputs.size() : s.targets.size();
  }
  const Matrix& at(const SnapshotSample& s, std::size_t k) const {
    return input ? s.inputs[k].*input : s.targets[k].*target;
  }
  Matrix& at(SnapshotSample& s, std::size_t k) const {
    return input ? s.inputs[k].*input : s.targets[k].*target;
  }
};

const std::vector<Family>& families() {
  static const std::vector<Family> f{
      {"iod.csv", &SampleInput::iod, nullptr},
      {"uod_long.csv", &SampleInput::uod_long, nullptr},
      {"uod_short.csv", &SampleInput::uod_short, nullptr},
      {"do_input.csv", &SampleInput::dom, nullptr},
      {"od_target.csv", nullptr, &SampleTarget::od},
      {"do_target.csv", nullptr, &SampleTarget::dom},
  };
  return f;
}

std::vector<SnapshotSample>& split_of(Dataset& ds, std::size_t which) {
  return which == 0 ? ds.train : which == 1 ? ds.val : ds.test;
}
const std::vector<SnapshotSample>& split_of(const Dataset& ds, std::size_t which) {
  return which == 0 ? ds.train : which == 1 ? ds.val : ds.test;
}

void write_sparse(std::ostream& out, std::size_t split, std::size_t sample, std::size_t step,
                  const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(r, c) != 0.0) {
        out << kSplits[split] << ',' << sample << ',' << step << ',' << r << ',' << c << ','
            << format_double(m(r, c)) << '\n';
      }
    }
  }
}

// Calls visit(split, sample, step, row, col, value) for each data line.
template <typename Visit>
void read_sparse(const fs::path& path, Visit&& visit) {
  auto in = open_in(path);
  std::string line;
  std::getline(in, line);  // column header
  int line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fail = [&] {
      throw Error(ErrorKind::Parse,
                  path.string() + ":" + std::to_string(line_no) + ": malformed '" + line + "'");
    };
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail();
    const std::string_view split_name(line.data(), comma);
    std::size_t split = 3;
    for (std::size_t s = 0; s < kSplits.size(); ++s) {
      if (split_name == kSplits[s]) split = s;
    }
    if (split == 3) fail();
    const char* p = line.data() + comma + 1;
    const char* end = line.data() + line.size();
    std::size_t ints[4];
    for (auto& v : ints) {
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc{} || next == end || *next != ',') fail();
      p = next + 1;
    }
    double value = 0.0;
    auto [next, ec] = std::from_chars(p, end, value);
    if (ec != std::errc{} || next != end) fail();
    visit(split, ints[0], ints[1], ints[2], ints[3], value);
  }
}

}  // namespace

void write_maps_csv(const CompressionMaps& maps, const fs::path& dir) {
  fs::create_directories(dir);
  write_map(maps.od_map(), dir / "od_map.csv");
  write_map(maps.do_map(), dir / "do_map.csv");
}

CompressionMaps read_maps_csv(const fs::path& dir) {
  return CompressionMaps(read_map(dir / "od_map.csv"), read_map(dir / "do_map.csv"));
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["schema_version"] = kStoreSchemaVersion;
  manifest["stations"] = ds.stations;
  manifest["k"] = ds.k;
  manifest["n"] = ds.spec.n;
  manifest["m"] = ds.spec.m;
  manifest["intervals_per_day"] = ds.spec.intervals_per_day;
  manifest["splits"] = {{"train_begin", ds.spec.splits.train_begin},
                        {"train_end", ds.spec.splits.train_end},
                        {"val_end", ds.spec.splits.val_end},
                        {"test_end", ds.spec.splits.test_end}};
  json refs = json::object();
  for (std::size_t s = 0; s < kSplits.size(); ++s) {
    json list = json::array();
    for (const auto& sample : split_of(ds, s)) list.push_back(sample.reference);
    refs[kSplits[s]] = std::move(list);
  }
  manifest["references"] = std::move(refs);
  json files = json::array();

  for (const auto& fam : families()) {
    auto out = open_out(dir / fam.file);
    out << "split,sample,step,row,col,value\n";
    for (std::size_t s = 0; s < kSplits.size(); ++s) {
      auto& samples = split_of(ds, s);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t k = 0; k < fam.steps(samples[i]); ++k) {
          write_sparse(out, s, i, k, fam.at(samples[i], k));
        }
      }
    }
    files.push_back(fam.file);
  }
  {
    auto out = open_out(dir / "u.csv");
    out << "split,sample,step,row,col,value\n";
    for (std::size_t s = 0; s < kSplits.size(); ++s) {
      const auto& samples = split_of(ds, s);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t k = 0; k < samples[i].inputs.size(); ++k) {
          write_sparse(out, s, i, k, samples[i].inputs[k].u);
        }
      }
    }
    files.push_back("u.csv");
  }
  {
    // Complete per-interval training matrices; `sample` holds the interval.
    auto out_od = open_out(dir / "train_truth_od.csv");
    auto out_do = open_out(dir / "train_truth_do.csv");
    out_od << "split,sample,step,row,col,value\n";
    out_do << "split,sample,step,row,col,value\n";
    json intervals = json::array();
    for (const auto& t : ds.train_truth) {
      write_sparse(out_od, 0, static_cast<std::size_t>(t.interval), 0, t.od);
      write_sparse(out_do, 0, static_cast<std::size_t>(t.interval), 0, t.dom);
      intervals.push_back(t.interval);
    }
    manifest["train_truth_intervals"] = std::move(intervals);
    files.push_back("train_truth_od.csv");
    files.push_back("train_truth_do.csv");
  }
  manifest["files"] = std::move(files);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error(ErrorKind::Io, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorKind::Io, "cannot read " + (dir / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, (dir / "manifest.json").string() + ": " + e.what());
  }
  if (manifest.value("schema_version", -1) != kStoreSchemaVersion) {
    throw Error(ErrorKind::SchemaVersion,
                "sample store schema_version " + manifest.value("schema_version", json(-1)).dump() +
                    " != " + std::to_string(kStoreSchemaVersion) + "; re-run preprocess");
  }
  Dataset ds;
  try {
    ds.stations = manifest.at("stations");
    ds.k = manifest.at("k");
    ds.spec.n = manifest.at("n");
    ds.spec.m = manifest.at("m");
    ds.spec.intervals_per_day = manifest.at("intervals_per_day");
    const auto& sp = manifest.at("splits");
    ds.spec.splits = {sp.at("train_begin"), sp.at("train_end"), sp.at("val_end"),
                      sp.at("test_end")};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, "manifest: " + std::string(e.what()));
  }
  const int n = ds.stations;
  const int k = ds.k;
  for (std::size_t s = 0; s < kSplits.size(); ++s) {
    auto& samples = split_of(ds, s);
    for (const auto& ref : manifest.at("references").at(kSplits[s])) {
      SnapshotSample sample;
      sample.reference = ref.get<std::int64_t>();
      for (int i = 0; i < ds.spec.n; ++i) {
        sample.inputs.push_back({Matrix::Zero(n, k), Vector::Zero(n), Matrix::Zero(n, k),
                                 Matrix::Zero(n, k), Matrix::Zero(n, k)});
      }
      for (int j = 0; j < ds.spec.m; ++j) {
        sample.targets.push_back({Matrix::Zero(n, k), Matrix::Zero(n, k)});
      }
      samples.push_back(std::move(sample));
    }
  }

  auto check = [&](bool ok, const fs::path& path) {
    if (!ok) throw Error(ErrorKind::Parse, path.string() + ": index outside manifest shapes");
  };
  for (const auto& fam : families()) {
    const auto path = dir / fam.file;
    read_sparse(path, [&](std::size_t split, std::size_t sample, std::size_t step, std::size_t r,
                          std::size_t c, double v) {
      auto& samples = split_of(ds, split);
      check(sample < samples.size(), path);
      const std::size_t steps = fam.input ? ds.spec.n : ds.spec.m;
      check(step < steps && r < static_cast<std::size_t>(n) && c < static_cast<std::size_t>(k),
            path);
      fam.at(samples[sample], step)(r, c) = v;
    });
  }
  read_sparse(dir / "u.csv", [&](std::size_t split, std::size_t sample, std::size_t step,
                                 std::size_t r, std::size_t c, double v) {
    auto& samples = split_of(ds, split);
    check(sample < samples.size() && step < static_cast<std::size_t>(ds.spec.n) &&
              r < static_cast<std::size_t>(n) && c == 0,
          dir / "u.csv");
    samples[sample].inputs[step].u(r) = v;
  });

  std::map<std::int64_t, std::size_t> slot;
  for (const auto& iv : manifest.at("train_truth_intervals")) {
    slot[iv.get<std::int64_t>()] = ds.train_truth.size();
    ds.train_truth.push_back({iv.get<std::int64_t>(), Matrix::Zero(n, k), Matrix::Zero(n, k)});
  }
  for (const char* file : {"train_truth_od.csv", "train_truth_do.csv"}) {
    const bool is_od = std::string(file) == "train_truth_od.csv";
    read_sparse(dir / file, [&](std::size_t, std::size_t interval, std::size_t, std::size_t r,
                                std::size_t c, double v) {
      auto it = slot.find(static_cast<std::int64_t>(interval));
      check(it != slot.end() && r < static_cast<std::size_t>(n) && c < static_cast<std::size_t>(k),
            dir / file);
      auto& truth = ds.train_truth[it->second];
      (is_od ? truth.od : truth.dom)(r, c) = v;
    });
  }
  return ds;
}

}  // namespace hiam
