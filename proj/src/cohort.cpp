#include "strokenet/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "strokenet/errors.hpp"
#include "strokenet/text.hpp"

namespace strokenet {

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::none: return "";
    case SplitTag::train: return "train";
    case SplitTag::test: return "test";
  }
  return "";
}

SplitTag parse_split_tag(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty() || t == "none") return SplitTag::none;
  if (t == "train") return SplitTag::train;
  if (t == "test") return SplitTag::test;
  throw ConfigError("unknown split tag '" + text + "'");
}

void PatientRecord::validate(std::size_t field_count) const {
  if (mrs < 0 || mrs >= kNumMrsClasses) {
    throw ParameterError("record " + id + ": mRS " + std::to_string(mrs) + " outside 0..6");
  }
  if (treatment != 0 && treatment != 1) {
    throw ParameterError("record " + id + ": treatment must be 0 or 1");
  }
  if (fields.size() != field_count) {
    throw ParameterError("record " + id + ": has " + std::to_string(fields.size()) +
                         " clinical fields, cohort declares " + std::to_string(field_count));
  }
}

void CohortManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    r.validate(field_names.size());
    if (!ids.insert(r.id).second) throw ParameterError("duplicate record id " + r.id);
  }
}

std::array<std::size_t, kNumMrsClasses> CohortManifest::class_counts(SplitTag tag) const {
  std::array<std::size_t, kNumMrsClasses> counts{};
  for (const auto& r : records)
    if (r.split == tag) ++counts[static_cast<std::size_t>(r.mrs)];
  return counts;
}

std::vector<std::size_t> CohortManifest::indices(SplitTag tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == tag) out.push_back(i);
  return out;
}

void CohortManifest::fit_statistics() {
  validate();
  stats.assign(field_names.size(), {});
  for (std::size_t f = 0; f < field_names.size(); ++f) {
    FieldStats& st = stats[f];
    st.name = field_names[f];
    for (const auto& r : records) {
      double v;
      const std::string& raw = r.fields[f];
      if (trim(raw) != kMissingToken && !trim(raw).empty() && !try_parse_double(raw, v)) {
        st.kind = FieldKind::categorical;
        break;
      }
    }
    std::vector<double> values;
    std::set<std::string> levels;
    for (const auto& r : records) {
      if (r.split != SplitTag::train) continue;
      const std::string raw = trim(r.fields[f]);
      if (raw == kMissingToken || raw.empty()) continue;
      if (st.kind == FieldKind::categorical) {
        levels.insert(raw);
      } else {
        values.push_back(parse_double(raw));
      }
    }
    st.levels.assign(levels.begin(), levels.end());
    if (st.kind == FieldKind::continuous && !values.empty()) {
      const double n = static_cast<double>(values.size());
      st.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
      double var = 0.0;
      for (double v : values) var += (v - st.mean) * (v - st.mean);
      st.stddev = std::sqrt(var / n);
      std::sort(values.begin(), values.end());
      const std::size_t mid = values.size() / 2;
      st.median = values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
    }
  }
}

namespace {
const std::vector<std::string> kFixedColumns = {"id", "volume_path", "treatment", "mrs", "split"};
}

CohortManifest parse_manifest(const std::string& csv) {
  CohortManifest m;
  auto lines = split(csv, '\n');
  std::size_t line_no = 0;
  bool header_seen = false;
  for (const auto& raw_line : lines) {
    ++line_no;
    const std::string line = trim(raw_line);
    if (line.empty()) continue;
    auto cols = split(line, ',');
    for (auto& c : cols) c = trim(c);
    if (!header_seen) {
      if (cols.size() < kFixedColumns.size() ||
          !std::equal(kFixedColumns.begin(), kFixedColumns.end(), cols.begin())) {
        throw ConfigError("manifest header must start with id,volume_path,treatment,mrs,split");
      }
      m.field_names.assign(cols.begin() + kFixedColumns.size(), cols.end());
      header_seen = true;
      continue;
    }
    if (cols.size() != kFixedColumns.size() + m.field_names.size()) {
      throw ConfigError("manifest line " + std::to_string(line_no) + ": expected " +
                        std::to_string(kFixedColumns.size() + m.field_names.size()) +
                        " columns, got " + std::to_string(cols.size()));
    }
    PatientRecord r;
    r.id = cols[0];
    r.volume_path = cols[1];
    try {
      r.treatment = static_cast<int>(parse_size(cols[2]));
      r.mrs = static_cast<int>(parse_size(cols[3]));
    } catch (const ConfigError& e) {
      throw ConfigError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    r.split = parse_split_tag(cols[4]);
    r.fields.assign(cols.begin() + kFixedColumns.size(), cols.end());
    m.records.push_back(std::move(r));
  }
  if (!header_seen) throw ConfigError("manifest is empty");
  m.validate();
  return m;
}

std::string format_manifest(const CohortManifest& m) {
  std::string out;
  for (std::size_t i = 0; i < kFixedColumns.size(); ++i) out += (i ? "," : "") + kFixedColumns[i];
  for (const auto& f : m.field_names) out += "," + f;
  out += '\n';
  for (const auto& r : m.records) {
    out += r.id + "," + r.volume_path + "," + std::to_string(r.treatment) + "," +
           std::to_string(r.mrs) + "," + to_string(r.split);
    for (const auto& v : r.fields) out += "," + v;
    out += '\n';
  }
  return out;
}

CohortManifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text_file(path));
}

void write_manifest(const CohortManifest& manifest, const std::filesystem::path& path) {
  write_text_file(path, format_manifest(manifest));
}

std::vector<std::string> metadata_layout(const CohortManifest& m) {
  if (!m.fitted()) throw ConfigError("manifest statistics not fitted");
  std::vector<std::string> cols = {"treatment=control", "treatment=evt"};
  for (const auto& st : m.stats) {
    if (st.kind == FieldKind::continuous) {
      cols.push_back(st.name);
      cols.push_back(st.name + ".missing");
    }
  }
  for (const auto& st : m.stats) {
    if (st.kind == FieldKind::categorical) {
      for (const auto& level : st.levels) cols.push_back(st.name + "=" + level);
    }
  }
  if (cols.size() > m.metadata_width) {
    throw ConfigError("clinical layout needs " + std::to_string(cols.size()) +
                      " columns, declared width is " + std::to_string(m.metadata_width));
  }
  while (cols.size() < m.metadata_width) cols.push_back("pad" + std::to_string(cols.size()));
  return cols;
}

Tensor encode_metadata(const PatientRecord& record, const CohortManifest& m, Mode mode,
                       EncodeDiagnostics* diagnostics) {
  if (mode == Mode::image_only) {
    return Tensor({1, 2}, record.treatment ? std::vector<double>{0.0, 1.0}
                                           : std::vector<double>{1.0, 0.0});
  }
  if (!m.fitted()) throw ConfigError("manifest statistics not fitted");
  record.validate(m.field_names.size());
  std::vector<double> out;
  out.reserve(m.metadata_width);
  out.push_back(record.treatment ? 0.0 : 1.0);
  out.push_back(record.treatment ? 1.0 : 0.0);
  for (std::size_t f = 0; f < m.stats.size(); ++f) {
    const FieldStats& st = m.stats[f];
    if (st.kind != FieldKind::continuous) continue;
    double v;
    bool missing = !try_parse_double(record.fields[f], v);
    if (missing) {
      v = st.median;
      if (diagnostics) ++diagnostics->imputed;
    }
    const double sd = st.stddev > 1e-8 ? st.stddev : 0.0;
    out.push_back(sd > 0.0 ? (v - st.mean) / sd : 0.0);
    out.push_back(missing ? 1.0 : 0.0);
  }
  for (std::size_t f = 0; f < m.stats.size(); ++f) {
    const FieldStats& st = m.stats[f];
    if (st.kind != FieldKind::categorical) continue;
    const std::string raw = trim(record.fields[f]);
    const bool missing = raw == kMissingToken || raw.empty();
    bool matched = false;
    for (const auto& level : st.levels) {
      const bool hit = !missing && raw == level;
      matched = matched || hit;
      out.push_back(hit ? 1.0 : 0.0);
    }
    if (diagnostics) {
      if (missing) ++diagnostics->imputed;
      else if (!matched) ++diagnostics->unknown_levels;
    }
  }
  if (out.size() > m.metadata_width) {
    throw ConfigError("clinical layout needs " + std::to_string(out.size()) +
                      " columns, declared width is " + std::to_string(m.metadata_width));
  }
  out.resize(m.metadata_width, 0.0);
  return Tensor({1, m.metadata_width}, std::move(out));
}

std::vector<bool> stratified_selection(std::span<const int> labels, double fraction,
                                       std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ParameterError("stratified fraction must be in (0,1)");
  }
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);

  struct Quota {
    int label;
    std::size_t keep;
    double remainder;
    std::size_t count;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [label, members] : groups) {
    const double exact = fraction * static_cast<double>(members.size());
    Quota q{label, static_cast<std::size_t>(std::floor(exact)), exact - std::floor(exact),
            members.size()};
    if (members.size() == 1) {
      q.keep = 1;
      q.remainder = -1.0;
    }
    assigned += q.keep;
    quotas.push_back(q);
  }
  const auto target =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(labels.size())));
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t k = 0; k < order.size() && assigned < target; ++k) {
    Quota& q = quotas[order[k]];
    if (q.remainder > 0.0 && q.keep < q.count) {
      ++q.keep;
      ++assigned;
    }
  }

  std::vector<bool> selected(labels.size(), false);
  Rng rng(seed);
  for (const auto& q : quotas) {
    std::vector<std::size_t> members = groups[q.label];
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < q.keep; ++i) selected[members[i]] = true;
  }
  return selected;
}

void split_cohort(CohortManifest& manifest, double train_fraction, std::uint64_t seed) {
  if (manifest.records.empty()) throw ConfigError("cannot split an empty cohort");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must be in (0,1)");
  }
  std::vector<int> labels;
  for (const auto& r : manifest.records) labels.push_back(r.mrs);
  const auto selected = stratified_selection(labels, train_fraction, seed);
  std::size_t n_train = 0;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    manifest.records[i].split = selected[i] ? SplitTag::train : SplitTag::test;
    n_train += selected[i] ? 1 : 0;
  }
  if (n_train == 0 || n_train == selected.size()) {
    throw ConfigError("stratified split of " + std::to_string(selected.size()) +
                      " records leaves an empty " + (n_train == 0 ? "training" : "test") + " split");
  }
  manifest.stats.clear();
}

}  // namespace strokenet
