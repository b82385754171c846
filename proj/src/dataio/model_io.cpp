#include "augmorph/dataio/model_io.hpp"

#include <string>

#include "augmorph/dataio/checkpoint.hpp"
#include "augmorph/dataio/errors.hpp"

namespace augmorph::dataio {

using xformmodels::NetArch;
using xformmodels::NetParams;

namespace {

nlohmann::json arch_json(const NetArch& a) {
  return {{"spatial_rank", a.spatial_rank}, {"in_channels", a.in_channels}, {"out_channels", a.out_channels},
          {"widths", a.widths},             {"kernel_size", a.kernel_size}, {"slope", a.slope}};
}

NetArch arch_from_json(const nlohmann::json& j) {
  NetArch a;
  a.spatial_rank = j.at("spatial_rank").get<int>();
  a.in_channels = j.at("in_channels").get<int>();
  a.out_channels = j.at("out_channels").get<int>();
  a.widths = j.at("widths").get<std::vector<int>>();
  a.kernel_size = j.at("kernel_size").get<int>();
  a.slope = j.at("slope").get<double>();
  return a;
}

void add_net(Checkpoint& c, const std::string& prefix, const NetParams& net) {
  c.hyperparameters[prefix + "arch"] = arch_json(net.arch);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    c.tensors.emplace_back(prefix + "layer" + std::to_string(i) + ".kernel", net.layers[i].kernel);
    c.tensors.emplace_back(prefix + "layer" + std::to_string(i) + ".bias", net.layers[i].bias);
  }
}

NetParams read_net(const Checkpoint& c, const std::string& prefix) {
  NetParams net;
  net.arch = arch_from_json(c.hyperparameters.at(prefix + "arch"));
  // Shapes are checked against a freshly built net of the same architecture.
  const NetParams ref = xformmodels::init_net(net.arch, 0);
  for (std::size_t i = 0; i < ref.layers.size(); ++i) {
    xformmodels::ConvLayer l{c.tensor(prefix + "layer" + std::to_string(i) + ".kernel"),
                             c.tensor(prefix + "layer" + std::to_string(i) + ".bias")};
    if (l.kernel.shape != ref.layers[i].kernel.shape || l.bias.shape != ref.layers[i].bias.shape) {
      throw DataError("checkpoint '" + c.kind + "': layer " + std::to_string(i) + " does not match its architecture");
    }
    net.layers.push_back(std::move(l));
  }
  return net;
}

Checkpoint read_kind(const std::filesystem::path& path, const std::string& kind) {
  Checkpoint c = read_checkpoint(path);
  if (c.kind != kind) throw DataError(path.string() + ": expected a " + kind + " checkpoint, found " + c.kind);
  return c;
}

template <typename Fn>
auto parse(const std::filesystem::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint header (" + e.what() + ")");
  }
}

}  // namespace

void save_spatial(const std::filesystem::path& path, const xformmodels::SpatialModel& model) {
  Checkpoint c;
  c.kind = "spatial";
  c.hyperparameters["smoothness_weight"] = model.smoothness_weight;
  c.hyperparameters["ncc_window"] = model.ncc_window;
  add_net(c, "forward.", model.forward_net);
  add_net(c, "inverse.", model.inverse_net);
  write_checkpoint(path, c);
}

xformmodels::SpatialModel load_spatial(const std::filesystem::path& path) {
  const Checkpoint c = read_kind(path, "spatial");
  return parse(path, [&] {
    xformmodels::SpatialModel m;
    m.smoothness_weight = c.hyperparameters.at("smoothness_weight").get<double>();
    m.ncc_window = c.hyperparameters.at("ncc_window").get<int>();
    m.forward_net = read_net(c, "forward.");
    m.inverse_net = read_net(c, "inverse.");
    return m;
  });
}

void save_appearance(const std::filesystem::path& path, const xformmodels::AppearanceModel& model) {
  Checkpoint c;
  c.kind = "appearance";
  c.hyperparameters["lambda_a"] = model.lambda_a;
  add_net(c, "", model.net);
  write_checkpoint(path, c);
}

xformmodels::AppearanceModel load_appearance(const std::filesystem::path& path) {
  const Checkpoint c = read_kind(path, "appearance");
  return parse(path, [&] {
    return xformmodels::AppearanceModel{read_net(c, ""), c.hyperparameters.at("lambda_a").get<double>()};
  });
}

void save_segmenter(const std::filesystem::path& path, const segeval::SegModel& model) {
  Checkpoint c;
  c.kind = "segmenter";
  c.hyperparameters["label_count"] = model.label_count;
  c.hyperparameters["slice_shape"] = model.slice_shape;
  add_net(c, "", model.net);
  write_checkpoint(path, c);
}

segeval::SegModel load_segmenter(const std::filesystem::path& path) {
  const Checkpoint c = read_kind(path, "segmenter");
  return parse(path, [&] {
    segeval::SegModel m;
    m.label_count = c.hyperparameters.at("label_count").get<int>();
    m.slice_shape = c.hyperparameters.at("slice_shape").get<diffcore::Shape>();
    m.net = read_net(c, "");
    return m;
  });
}

}  // namespace augmorph::dataio
