#include <set>

#include "json.hpp"
#include "rosd/errors.hpp"
#include "rosd/tensor_store.hpp"

namespace rosd {
namespace {

using nlohmann::json;

std::pair<std::size_t, std::size_t> line_and_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t column = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::ParseError, field + ": " + what);
}

const json& require(const json& object, const char* key, const std::string& where) {
  auto it = object.find(key);
  if (it == object.end()) field_error(where + "." + key, "missing required field");
  return *it;
}

std::string as_string(const json& value, const std::string& where) {
  if (!value.is_string()) field_error(where, "expected string");
  return value.get<std::string>();
}

std::size_t as_positive(const json& value, const std::string& where) {
  if (!value.is_number_integer() && !value.is_number_unsigned()) field_error(where, "expected integer");
  const auto v = value.get<std::int64_t>();
  if (v <= 0) field_error(where, "expected positive integer");
  return static_cast<std::size_t>(v);
}

ImageRecord parse_image(const json& node, const std::string& where) {
  if (!node.is_object()) field_error(where, "expected object");
  static const std::set<std::string> known = {"image_id",    "original_width",  "original_height", "tensor_paths",
                                              "descriptor_path", "ground_truth", "class_label"};
  for (const auto& [key, value] : node.items()) {
    if (!known.count(key)) field_error(where + "." + key, "unknown field");
  }

  ImageRecord record;
  record.image_id = as_string(require(node, "image_id", where), where + ".image_id");
  record.original_width = as_positive(require(node, "original_width", where), where + ".original_width");
  record.original_height = as_positive(require(node, "original_height", where), where + ".original_height");

  const json& tensors = require(node, "tensor_paths", where);
  if (!tensors.is_object()) field_error(where + ".tensor_paths", "expected object of layer -> path");
  for (const auto& [layer, path] : tensors.items()) {
    record.tensor_paths[layer] = as_string(path, where + ".tensor_paths." + layer);
  }
  if (auto it = node.find("descriptor_path"); it != node.end() && !it->is_null()) {
    record.descriptor_path = as_string(*it, where + ".descriptor_path");
  }
  if (auto it = node.find("class_label"); it != node.end() && !it->is_null()) {
    record.class_label = as_string(*it, where + ".class_label");
  }
  if (auto it = node.find("ground_truth"); it != node.end() && !it->is_null()) {
    if (!it->is_array()) field_error(where + ".ground_truth", "expected array");
    std::vector<GroundTruthBox> boxes;
    for (std::size_t b = 0; b < it->size(); ++b) {
      const std::string bw = where + ".ground_truth[" + std::to_string(b) + "]";
      const json& entry = (*it)[b];
      if (!entry.is_object()) field_error(bw, "expected object with box and label");
      const json& coords = require(entry, "box", bw);
      if (!coords.is_array() || coords.size() != 4) field_error(bw + ".box", "expected [xmin, ymin, xmax, ymax]");
      for (const auto& c : coords) {
        if (!c.is_number()) field_error(bw + ".box", "coordinates must be numbers");
      }
      GroundTruthBox gt;
      gt.box = Box{coords[0].get<double>(), coords[1].get<double>(), coords[2].get<double>(), coords[3].get<double>()};
      if (auto label = entry.find("label"); label != entry.end() && !label->is_null()) {
        gt.label = as_string(*label, bw + ".label");
      } else if (record.class_label) {
        gt.label = *record.class_label;
      }
      boxes.push_back(std::move(gt));
    }
    record.ground_truth = std::move(boxes);
  }
  return record;
}

}  // namespace

fs::path DatasetManifest::resolve(const fs::path& relative) const {
  if (relative.is_absolute()) return relative;
  return base_dir / relative;
}

const ImageRecord* DatasetManifest::find(std::string_view image_id) const {
  for (const auto& image : images) {
    if (image.image_id == image_id) return &image;
  }
  return nullptr;
}

DatasetManifest parse_manifest(std::string_view text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, column] = line_and_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw Error(ErrorCode::ParseError,
                "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + e.what());
  }
  if (!doc.is_object()) field_error("<root>", "expected object");
  const json& images = require(doc, "images", "<root>");
  if (!images.is_array()) field_error("images", "expected array");

  DatasetManifest manifest;
  manifest.base_dir = base_dir;
  for (std::size_t i = 0; i < images.size(); ++i) {
    manifest.images.push_back(parse_image(images[i], "images[" + std::to_string(i) + "]"));
  }
  return manifest;
}

DatasetManifest load_manifest(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return parse_manifest(text, path.parent_path());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + std::string(e.what()));
  }
}

std::vector<ManifestViolation> validate_manifest(const DatasetManifest& manifest) {
  std::vector<ManifestViolation> violations;
  std::set<std::string> seen;
  for (const auto& image : manifest.images) {
    if (image.image_id.empty()) violations.push_back({image.image_id, "image_id", "empty id"});
    if (!seen.insert(image.image_id).second) violations.push_back({image.image_id, "image_id", "duplicate id"});
    if (image.original_width == 0 || image.original_height == 0) {
      violations.push_back({image.image_id, "original_width", "image size must be positive"});
    }
    for (const auto& [layer, path] : image.tensor_paths) {
      if (!fs::is_regular_file(manifest.resolve(path))) {
        violations.push_back({image.image_id, "tensor_paths." + layer, "file not found: " + path.string()});
      }
    }
    if (!image.descriptor_path.empty() && !fs::is_regular_file(manifest.resolve(image.descriptor_path))) {
      violations.push_back({image.image_id, "descriptor_path", "file not found: " + image.descriptor_path.string()});
    }
    if (image.ground_truth) {
      for (std::size_t b = 0; b < image.ground_truth->size(); ++b) {
        const Box& box = (*image.ground_truth)[b].box;
        if (!is_valid(box, image.size())) {
          violations.push_back({image.image_id, "ground_truth[" + std::to_string(b) + "]",
                                "box " + to_string(box) + " is degenerate or outside the " +
                                    std::to_string(image.original_width) + "x" +
                                    std::to_string(image.original_height) + " image"});
        }
      }
    }
  }
  return violations;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json images = json::array();
  for (const auto& image : manifest.images) {
    json node;
    node["image_id"] = image.image_id;
    node["original_width"] = image.original_width;
    node["original_height"] = image.original_height;
    json tensors = json::object();
    for (const auto& [layer, path] : image.tensor_paths) tensors[layer] = path.generic_string();
    node["tensor_paths"] = tensors;
    if (!image.descriptor_path.empty()) node["descriptor_path"] = image.descriptor_path.generic_string();
    if (image.class_label) node["class_label"] = *image.class_label;
    if (image.ground_truth) {
      json boxes = json::array();
      for (const auto& gt : *image.ground_truth) {
        boxes.push_back({{"box", {gt.box.xmin, gt.box.ymin, gt.box.xmax, gt.box.ymax}}, {"label", gt.label}});
      }
      node["ground_truth"] = boxes;
    }
    images.push_back(std::move(node));
  }
  json doc;
  doc["version"] = 1;
  doc["images"] = std::move(images);
  return doc.dump(2) + "\n";
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  write_file_atomic(path, manifest_to_json(manifest));
}

}  // namespace rosd
