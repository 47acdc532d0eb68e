#include "deft/checkpoint.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>

namespace deft {
namespace {

using json = nlohmann::json;
constexpr char kMagic[8] = {'D', 'E', 'F', 'T', 'C', 'K', 'P', 'T'};

json model_json(const ModelConfig& c) {
  return {{"mics", c.mics},         {"max_sources", c.max_sources}, {"dim", c.dim},
          {"blocks", c.blocks},     {"kernel", c.kernel},           {"heads", c.heads},
          {"ssm_state", c.ssm_state}, {"ssm_expand", c.ssm_expand}, {"classes", c.classes},
          {"norm_groups", c.norm_groups}};
}

ModelConfig model_from(const json& j) {
  ModelConfig c;
  c.mics = j.at("mics");
  c.max_sources = j.at("max_sources");
  c.dim = j.at("dim");
  c.blocks = j.at("blocks");
  c.kernel = j.at("kernel");
  c.heads = j.at("heads");
  c.ssm_state = j.at("ssm_state");
  c.ssm_expand = j.at("ssm_expand");
  c.classes = j.at("classes");
  c.norm_groups = j.at("norm_groups");
  return c;
}

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw IoError("truncated checkpoint " + path.string());
  return v;
}

void write_tensor(std::ostream& os, const Mat<float>& m) {
  os.write(reinterpret_cast<const char*>(m.data()), std::streamsize(m.size() * sizeof(float)));
}

void read_tensor(std::istream& is, Mat<float>& m, const std::filesystem::path& path) {
  if (!is.read(reinterpret_cast<char*>(m.data()), std::streamsize(m.size() * sizeof(float))))
    throw IoError("truncated checkpoint " + path.string());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const std::string& stage, const TrainingState* training) {
  auto& m = const_cast<Model<float>&>(model);
  json tensors = json::array();
  m.visit("", [&](const std::string& name, Mat<float>& p) {
    tensors.push_back({{"name", name}, {"rows", p.rows()}, {"cols", p.cols()}});
  });
  json ablation = json::array();
  for (const auto& s : model.stages) ablation.push_back({s.use_gcb, s.use_attn, s.use_ffn});
  json names = json::array();
  for (auto n : kClassNames) names.push_back(std::string(n));
  json header = {{"version", kCheckpointVersion},
                 {"stage", stage},
                 {"model", model_json(model.cfg)},
                 {"stft",
                  {{"sample_rate", model.stft_cfg.sample_rate},
                   {"win_len", model.stft_cfg.win_len},
                   {"hop", model.stft_cfg.hop},
                   {"window", "hamming"}}},
                 {"class_names", names},
                 {"ablation", ablation},
                 {"tensors", tensors}};
  if (training) {
    header["training"] = {{"epoch", training->epoch},
                          {"global_step", training->global_step},
                          {"best_metric", training->best_metric},
                          {"has_best", training->has_best},
                          {"lr", training->lr},
                          {"plateau_bad_epochs", training->plateau_bad_epochs},
                          {"optimizer_step", training->optimizer.step},
                          {"has_moments", !training->optimizer.m.empty()}};
  }
  const std::string text = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kMagic, sizeof kMagic);
    put(os, std::uint32_t(kCheckpointVersion));
    put(os, std::uint64_t(text.size()));
    os.write(text.data(), std::streamsize(text.size()));
    m.visit("", [&](const std::string&, Mat<float>& p) { write_tensor(os, p); });
    if (training && !training->optimizer.m.empty()) {
      for (const auto& t : training->optimizer.m) write_tensor(os, t);
      for (const auto& t : training->optimizer.v) write_tensor(os, t);
    }
    if (!os) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw IoError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(is, path);
  if (version != std::uint32_t(kCheckpointVersion))
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto size = get<std::uint64_t>(is, path);
  std::string text(size, '\0');
  if (!is.read(text.data(), std::streamsize(size))) throw IoError("truncated checkpoint " + path.string());

  Checkpoint ck;
  json header;
  try {
    header = json::parse(text);
    StftConfig stft;
    stft.sample_rate = header.at("stft").at("sample_rate");
    stft.win_len = header.at("stft").at("win_len");
    stft.hop = header.at("stft").at("hop");
    ck.model = Model<float>(model_from(header.at("model")), 0, stft);
    ck.stage = header.at("stage").get<std::string>();
    for (const auto& n : header.at("class_names")) ck.class_names.push_back(n.get<std::string>());
    const json& abl = header.at("ablation");
    if (abl.size() != ck.model.stages.size()) throw ParseError("ablation table size mismatch");
    for (std::size_t i = 0; i < abl.size(); ++i) {
      ck.model.stages[i].use_gcb = abl[i].at(0);
      ck.model.stages[i].use_attn = abl[i].at(1);
      ck.model.stages[i].use_ffn = abl[i].at(2);
    }
  } catch (const json::exception& e) {
    throw ParseError("bad checkpoint header in " + path.string() + ": " + e.what());
  }

  const json& tensors = header.at("tensors");
  std::size_t i = 0;
  std::vector<const Mat<float>*> params;
  ck.model.visit("", [&](const std::string& name, Mat<float>& p) {
    if (i >= tensors.size() || tensors[i].at("name") != name ||
        tensors[i].at("rows").get<Index>() != p.rows() || tensors[i].at("cols").get<Index>() != p.cols())
      throw ParseError("checkpoint tensor table does not match the model at " + name);
    read_tensor(is, p, path);
    params.push_back(&p);
    ++i;
  });
  if (i != tensors.size()) throw ParseError("checkpoint holds extra tensors");

  if (header.contains("training")) {
    const json& t = header["training"];
    TrainingState st;
    st.epoch = t.at("epoch");
    st.global_step = t.at("global_step");
    st.best_metric = t.at("best_metric");
    st.has_best = t.at("has_best");
    st.lr = t.at("lr");
    st.plateau_bad_epochs = t.at("plateau_bad_epochs");
    st.optimizer.step = t.at("optimizer_step");
    if (t.at("has_moments").get<bool>()) {
      for (auto* moments : {&st.optimizer.m, &st.optimizer.v}) {
        for (const Mat<float>* p : params) {
          moments->emplace_back(p->rows(), p->cols());
          read_tensor(is, moments->back(), path);
        }
      }
    }
    ck.training = std::move(st);
  }
  return ck;
}

}  // namespace deft
