#include "amortsens/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>

#include "amortsens/config.hpp"
#include "amortsens/errors.hpp"

namespace amortsens {

namespace {

constexpr int kVersion = 1;

template <class T>
void append(std::vector<unsigned char>& out, const T* data, std::size_t count) {
  const auto* p = reinterpret_cast<const unsigned char*>(data);
  out.insert(out.end(), p, p + count * sizeof(T));
}

template <class T>
std::vector<T> take(const std::string& bytes, std::size_t& offset, std::size_t count, const char* what) {
  const std::size_t n = count * sizeof(T);
  if (offset + n > bytes.size()) throw DataIntegrityError(std::string("payload too short for ") + what);
  std::vector<T> out(count);
  if (n > 0) std::memcpy(out.data(), bytes.data() + offset, n);
  offset += n;
  return out;
}

std::string hash_bytes(const void* data, std::size_t size) {
  return hex64(fnv1a64(static_cast<const unsigned char*>(data), size));
}

json parse_json_file(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataIntegrityError(path.string() + " is not valid JSON: " + e.what());
  }
}

template <class T>
T field(const json& j, const char* key, const fs::path& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataIntegrityError(path.string() + ": missing or malformed field '" + key + "'");
  }
}

void check_format(const json& j, const char* format, const fs::path& path) {
  if (!j.is_object() || j.value("format", "") != format) {
    throw DataIntegrityError(path.string() + " is not a " + format + " manifest");
  }
  if (j.value("version", 0) != kVersion) throw DataIntegrityError(path.string() + ": unsupported version");
}

json experiment_json(const std::string& text) {
  if (text.empty()) return json::object();
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

std::string read_payload(const fs::path& manifest, const json& j) {
  const auto file = field<std::string>(j.at("payload"), "file", manifest);
  const auto bytes = read_file(manifest.parent_path() / file);
  if (bytes.size() != field<std::size_t>(j.at("payload"), "bytes", manifest)) {
    throw DataIntegrityError(manifest.string() + ": payload size differs from the manifest");
  }
  return bytes;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw UsageError("failed writing " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path payload_path(const fs::path& manifest) {
  fs::path p = manifest;
  p.replace_extension(".bin");
  return p;
}

void save_dataset(const SimulationBatch& batch, const fs::path& manifest, const std::string& experiment) {
  const auto& l = batch.layout();
  const auto bytes = batch.payload_bytes();
  const auto bin = payload_path(manifest);
  const auto n = batch.rows();
  json arrays = json::array();
  arrays.push_back({{"name", "gamma"}, {"dtype", "float32"}, {"shape", {n, l.gamma_size}}});
  arrays.push_back({{"name", "likelihood"}, {"dtype", "int32"}, {"shape", {n}}});
  if (l.target == TargetKind::Parameters) {
    arrays.push_back({{"name", "theta"}, {"dtype", "float32"}, {"shape", {n, l.theta_dim}}});
  } else {
    arrays.push_back({{"name", "model"}, {"dtype", "int32"}, {"shape", {n}}});
  }
  arrays.push_back({{"name", "x"}, {"dtype", "float32"}, {"shape", {n, l.obs_rows, l.obs_dim}}});
  json j = {{"format", "amortsens-dataset"},
            {"version", kVersion},
            {"rows", n},
            {"layout",
             {{"target", l.target == TargetKind::Parameters ? "parameters" : "models"},
              {"gamma_size", l.gamma_size},
              {"likelihood_cardinality", l.likelihood_cardinality},
              {"theta_dim", l.theta_dim},
              {"n_models", l.n_models},
              {"obs_rows", l.obs_rows},
              {"obs_dim", l.obs_dim}}},
            {"arrays", arrays},
            {"byte_order", "little"},
            {"payload", {{"file", bin.filename().string()}, {"bytes", bytes.size()}}},
            {"hash", batch.content_hash()},
            {"experiment", experiment_json(experiment)}};
  write_file_atomic(bin, std::string(bytes.begin(), bytes.end()));
  write_file_atomic(manifest, j.dump(2) + "\n");
}

SimulationBatch load_dataset(const fs::path& manifest) {
  if (!fs::exists(manifest)) throw UsageError("dataset " + manifest.string() + " does not exist");
  const json j = parse_json_file(manifest);
  check_format(j, "amortsens-dataset", manifest);
  const auto& lj = j.at("layout");
  DatasetLayout l;
  const auto target = field<std::string>(lj, "target", manifest);
  if (target != "parameters" && target != "models") throw DataIntegrityError("unknown dataset target " + target);
  l.target = target == "parameters" ? TargetKind::Parameters : TargetKind::Models;
  l.gamma_size = field<std::size_t>(lj, "gamma_size", manifest);
  l.likelihood_cardinality = field<int>(lj, "likelihood_cardinality", manifest);
  l.theta_dim = field<std::size_t>(lj, "theta_dim", manifest);
  l.n_models = field<int>(lj, "n_models", manifest);
  l.obs_rows = field<std::size_t>(lj, "obs_rows", manifest);
  l.obs_dim = field<std::size_t>(lj, "obs_dim", manifest);
  const auto n = field<std::size_t>(j, "rows", manifest);
  const bool pe = l.target == TargetKind::Parameters;

  const auto bytes = read_payload(manifest, j);
  std::size_t off = 0;
  auto gammas = take<float>(bytes, off, n * l.gamma_size, "gamma");
  auto lik = take<std::int32_t>(bytes, off, n, "likelihood");
  auto theta = take<float>(bytes, off, pe ? n * l.theta_dim : 0, "theta");
  auto labels = take<std::int32_t>(bytes, off, pe ? 0 : n, "model");
  auto x = take<float>(bytes, off, n * l.obs_rows * l.obs_dim, "x");
  if (off != bytes.size()) throw DataIntegrityError(manifest.string() + ": trailing bytes in payload");
  auto batch = SimulationBatch::from_arrays(l, std::move(gammas), std::move(lik), std::move(theta), std::move(labels),
                                            std::move(x));
  const auto hash = field<std::string>(j, "hash", manifest);
  if (batch.content_hash() != hash) {
    throw DataIntegrityError(manifest.string() + ": content hash " + batch.content_hash() + " does not match " + hash);
  }
  return batch;
}

std::vector<unsigned char> checkpoint_payload(const Checkpoint& ck) {
  std::vector<unsigned char> out;
  for (const auto& p : ck.model.parameters().all()) append(out, p.value.data(), static_cast<std::size_t>(p.value.size()));
  const auto& f = ck.model.feature_standardizer();
  const auto& t = ck.model.theta_standardizer();
  for (const auto* v : {&f.mean, &f.sd, &t.mean, &t.sd}) append(out, v->data(), static_cast<std::size_t>(v->size()));
  return out;
}

std::string checkpoint_manifest(const Checkpoint& ck) {
  json params = json::array();
  std::size_t offset = 0;
  for (const auto& p : ck.model.parameters().all()) {
    params.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"offset", offset}});
    offset += static_cast<std::size_t>(p.value.size()) * sizeof(double);
  }
  const auto& f = ck.model.feature_standardizer();
  const auto& t = ck.model.theta_standardizer();
  json losses = json::array();
  for (double v : ck.epoch_losses) losses.push_back(std::isfinite(v) ? json(v) : json(nullptr));
  const auto payload = checkpoint_payload(ck);
  return json{{"format", "amortsens-checkpoint"},
              {"version", kVersion},
              {"architecture", to_json(ck.model.architecture())},
              {"train", to_json(ck.train)},
              {"epoch_losses", losses},
              {"validation_loss", std::isfinite(ck.validation_loss) ? json(ck.validation_loss) : json(nullptr)},
              {"dataset_hash", ck.dataset_hash},
              {"seed", ck.seed},
              {"parameters", params},
              {"standardizers",
               {{"features", f.mean.size()}, {"theta", t.mean.size()}, {"offset", offset}}},
              {"dtype", "float64"},
              {"byte_order", "little"},
              {"payload", {{"bytes", payload.size()}, {"hash", hash_bytes(payload.data(), payload.size())}}},
              {"experiment", experiment_json(ck.experiment)}}
      .dump(2);
}

void save_checkpoint(const Checkpoint& ck, const fs::path& manifest) {
  const auto payload = checkpoint_payload(ck);
  auto j = json::parse(checkpoint_manifest(ck));
  j["payload"]["file"] = payload_path(manifest).filename().string();
  write_file_atomic(payload_path(manifest), std::string(payload.begin(), payload.end()));
  write_file_atomic(manifest, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& manifest) {
  if (!fs::exists(manifest)) throw UsageError("checkpoint " + manifest.string() + " does not exist");
  const json j = parse_json_file(manifest);
  check_format(j, "amortsens-checkpoint", manifest);
  Checkpoint ck;
  Architecture arch;
  TrainConfig train;
  try {
    arch = architecture_from_json(j.at("architecture"), Architecture{});
    train = train_from_json(j.at("train"));
  } catch (const std::exception& e) {
    throw DataIntegrityError(manifest.string() + ": " + e.what());
  }
  const auto bytes = read_payload(manifest, j);
  if (hash_bytes(bytes.data(), bytes.size()) != field<std::string>(j.at("payload"), "hash", manifest)) {
    throw DataIntegrityError(manifest.string() + ": payload hash mismatch");
  }
  ck.model = Approximator(arch, 0);
  ck.train = train;
  auto& params = ck.model.parameters();
  const auto& plist = j.at("parameters");
  if (plist.size() != params.size()) throw DataIntegrityError(manifest.string() + ": parameter count mismatch");
  std::size_t off = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (plist[i].at("name").get<std::string>() != p.name || plist[i].at("rows").get<Eigen::Index>() != p.value.rows() ||
        plist[i].at("cols").get<Eigen::Index>() != p.value.cols() || plist[i].at("offset").get<std::size_t>() != off) {
      throw DataIntegrityError(manifest.string() + ": parameter " + p.name + " does not match the architecture");
    }
    const auto v = take<double>(bytes, off, static_cast<std::size_t>(p.value.size()), p.name.c_str());
    p.value = Eigen::Map<const Eigen::MatrixXd>(v.data(), p.value.rows(), p.value.cols());
  }
  const auto fdim = field<std::size_t>(j.at("standardizers"), "features", manifest);
  const auto tdim = field<std::size_t>(j.at("standardizers"), "theta", manifest);
  auto vec = [&](std::size_t n, const char* what) {
    const auto v = take<double>(bytes, off, n, what);
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(n)));
  };
  Standardizer f, t;
  f.mean = vec(fdim, "feature mean");
  f.sd = vec(fdim, "feature sd");
  t.mean = vec(tdim, "theta mean");
  t.sd = vec(tdim, "theta sd");
  if (off != bytes.size()) throw DataIntegrityError(manifest.string() + ": trailing bytes in payload");
  try {
    ck.model.set_standardizers(std::move(f), std::move(t));
  } catch (const UsageError& e) {
    throw DataIntegrityError(manifest.string() + ": " + e.what());
  }
  for (const auto& v : j.at("epoch_losses")) {
    ck.epoch_losses.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
  }
  const auto& vl = j.at("validation_loss");
  ck.validation_loss = vl.is_null() ? std::numeric_limits<double>::quiet_NaN() : vl.get<double>();
  ck.dataset_hash = field<std::string>(j, "dataset_hash", manifest);
  ck.seed = field<std::uint64_t>(j, "seed", manifest);
  ck.experiment = j.at("experiment").dump();
  return ck;
}

void save_ensemble_manifest(const EnsembleManifest& m, const fs::path& manifest) {
  if (m.members.size() != m.seeds.size()) throw UsageError("one seed per ensemble member required");
  json members = json::array();
  for (std::size_t i = 0; i < m.members.size(); ++i) {
    members.push_back({{"checkpoint", m.members[i].generic_string()}, {"seed", m.seeds[i]}});
  }
  const json j = {{"format", "amortsens-ensemble"},
                  {"version", kVersion},
                  {"dataset_hash", m.dataset_hash},
                  {"members", members}};
  write_file_atomic(manifest, j.dump(2) + "\n");
}

EnsembleManifest load_ensemble_manifest(const fs::path& manifest) {
  if (!fs::exists(manifest)) throw UsageError("ensemble manifest " + manifest.string() + " does not exist");
  const json j = parse_json_file(manifest);
  check_format(j, "amortsens-ensemble", manifest);
  EnsembleManifest m;
  m.dataset_hash = field<std::string>(j, "dataset_hash", manifest);
  for (const auto& e : j.at("members")) {
    m.members.emplace_back(field<std::string>(e, "checkpoint", manifest));
    m.seeds.push_back(field<std::uint64_t>(e, "seed", manifest));
  }
  return m;
}

Ensemble load_ensemble(const fs::path& manifest) {
  const auto m = load_ensemble_manifest(manifest);
  std::vector<Checkpoint> members;
  for (std::size_t i = 0; i < m.members.size(); ++i) {
    auto ck = load_checkpoint(manifest.parent_path() / m.members[i]);
    if (ck.seed != m.seeds[i]) throw DataIntegrityError("member " + std::to_string(i) + " seed differs from manifest");
    members.push_back(std::move(ck));
  }
  return assemble_ensemble(std::move(members), m.dataset_hash);
}

Ensemble load_models(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError(path.string() + " does not exist");
  const json j = parse_json_file(path);
  const auto format = j.is_object() ? j.value("format", "") : "";
  if (format == "amortsens-ensemble") return load_ensemble(path);
  if (format == "amortsens-checkpoint") {
    auto ck = load_checkpoint(path);
    const auto hash = ck.dataset_hash;
    std::vector<Checkpoint> one;
    one.push_back(std::move(ck));
    return assemble_ensemble(std::move(one), hash);
  }
  throw DataIntegrityError(path.string() + " is neither a checkpoint nor an ensemble manifest");
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Eigen::MatrixXd read_observations_csv(const fs::path& path, const std::vector<std::string>& columns) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open observed data " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataIntegrityError(path.string() + " is empty");
  const auto header = split(line);
  if (header != columns) {
    std::string want;
    for (const auto& c : columns) want += (want.empty() ? "" : ",") + c;
    throw DataIntegrityError(path.string() + ": header must be '" + want + "'");
  }
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    if (cells.size() != columns.size()) {
      throw DataIntegrityError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(columns.size()) + " fields");
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (c.empty() || end != c.c_str() + c.size() || !std::isfinite(v)) {
        throw DataIntegrityError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + c + "'");
      }
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataIntegrityError(path.string() + " has no data rows");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return out;
}

void write_observations_csv(const Eigen::MatrixXd& data, const std::vector<std::string>& columns,
                            const fs::path& path) {
  if (static_cast<std::size_t>(data.cols()) != columns.size()) throw UsageError("one column name per column required");
  std::ostringstream out;
  for (std::size_t j = 0; j < columns.size(); ++j) out << (j ? "," : "") << columns[j];
  out << "\n";
  out.precision(17);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) out << (j ? "," : "") << data(i, j);
    out << "\n";
  }
  write_file_atomic(path, out.str());
}

}  // namespace amortsens
