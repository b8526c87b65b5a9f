#include "vidqa/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vidqa {

const char* const kEntityCaptionTemplate = "A video of a {}.";
const char* const kActionCaptionTemplate = "A video contains the action of {}.";
const char* const kDefaultEntityPromptTemplate = "A video of a {}.";
const char* const kDefaultActionPromptTemplate = "A video contains the action of {}.";

namespace {

struct Color {
  double r, g, b;
};

const char* kEntityTable[] = {"square", "circle", "triangle", "diamond",
                              "cross",  "ring",   "bar",      "frame"};
const Color kColorTable[] = {{1.0, 0.15, 0.15}, {0.15, 1.0, 0.15}, {0.25, 0.45, 1.0},
                             {1.0, 1.0, 0.2},   {1.0, 0.2, 1.0},   {0.2, 1.0, 1.0},
                             {0.95, 0.95, 0.95}, {1.0, 0.6, 0.15}};
const char* kActionTable[] = {"drift", "retreat", "rise", "fall", "grow", "shrink"};

constexpr std::size_t kMaxEntities = 8;
constexpr std::size_t kMaxActions = 6;

std::string fill_template(const std::string& templ, const std::string& word) {
  std::string out = templ;
  out.replace(out.find("{}"), 2, word);
  return out;
}

bool inside_shape(std::size_t shape, double dx, double dy, double r) {
  double ax = std::abs(dx), ay = std::abs(dy);
  switch (shape) {
    case 0:  // square
      return std::max(ax, ay) <= r;
    case 1:  // circle
      return dx * dx + dy * dy <= r * r;
    case 2:  // triangle, apex up
      return dy >= -r && dy <= r && ax <= (dy + r) * 0.5;
    case 3:  // diamond
      return ax + ay <= r;
    case 4:  // cross
      return (ax <= r / 3.0 && ay <= r) || (ay <= r / 3.0 && ax <= r);
    case 5: {  // ring
      double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= r * r * 0.25;
    }
    case 6:  // bar
      return ax <= r && ay <= r / 3.0;
    default: {  // frame (hollow square)
      double m = std::max(ax, ay);
      return m <= r && m >= r * 0.55;
    }
  }
}

struct Motion {
  double dx_total = 0.0;
  double dy_total = 0.0;
  double scale_end = 1.0;
};

Motion motion_of(std::size_t action, double travel) {
  switch (action) {
    case 0:
      return {travel, 0.0, 1.0};  // drift: left to right
    case 1:
      return {-travel, 0.0, 1.0};  // retreat: right to left
    case 2:
      return {0.0, -travel, 1.0};  // rise
    case 3:
      return {0.0, travel, 1.0};  // fall
    case 4:
      return {0.0, 0.0, 1.9};  // grow
    default:
      return {0.0, 0.0, 0.45};  // shrink
  }
}

void validate(const SynthConfig& c) {
  if (c.num_entities < 2 || c.num_entities > kMaxEntities)
    throw std::invalid_argument("synth: num_entities must be in [2,8], got " +
                                std::to_string(c.num_entities));
  if (c.num_actions < 2 || c.num_actions > kMaxActions)
    throw std::invalid_argument("synth: num_actions must be in [2,6], got " +
                                std::to_string(c.num_actions));
  if (c.frame_size < 16)
    throw std::invalid_argument("synth: frame too small to render, need >= 16, got " +
                                std::to_string(c.frame_size));
  if (c.frames < 4)
    throw std::invalid_argument("synth: need at least 4 frames, got " +
                                std::to_string(c.frames));
  if (c.num_videos == 0) throw std::invalid_argument("synth: num_videos must be positive");
}

}  // namespace

std::vector<std::string> synth_entity_names(std::size_t n) {
  if (n < 2 || n > kMaxEntities)
    throw std::invalid_argument("synth_entity_names: n must be in [2,8]");
  return std::vector<std::string>(kEntityTable, kEntityTable + n);
}

std::vector<std::string> synth_action_names(std::size_t n) {
  if (n < 2 || n > kMaxActions)
    throw std::invalid_argument("synth_action_names: n must be in [2,6]");
  return std::vector<std::string>(kActionTable, kActionTable + n);
}

std::string synth_video_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "video_%04zu", index);
  return buf;
}

VideoTensor render_synth_video(const SynthConfig& config, std::uint64_t seed,
                               std::size_t index, std::size_t entity,
                               std::size_t action) {
  validate(config);
  if (entity >= config.num_entities || action >= config.num_actions)
    throw std::invalid_argument("render_synth_video: label out of range");

  double s = static_cast<double>(config.frame_size);
  double r0 = s * 0.16;
  double travel = s * 0.25;
  Motion m = motion_of(action, travel);
  double rmax = r0 * std::max(1.0, m.scale_end);

  double x_lo = rmax + 1.0 + std::max(0.0, -m.dx_total);
  double x_hi = s - 1.0 - rmax - std::max(0.0, m.dx_total);
  double y_lo = rmax + 1.0 + std::max(0.0, -m.dy_total);
  double y_hi = s - 1.0 - rmax - std::max(0.0, m.dy_total);
  if (x_lo >= x_hi || y_lo >= y_hi)
    throw std::invalid_argument("render_synth_video: frame too small to render motion");

  RngStream rng = RngStream(seed).derive("video", index);
  double x0 = rng.uniform(x_lo, x_hi);
  double y0 = rng.uniform(y_lo, y_hi);

  const Color& col = kColorTable[entity];
  double denom = static_cast<double>(config.frames - 1);
  VideoTensor v =
      VideoTensor::zeros(3, config.frames, config.frame_size, config.frame_size);
  for (std::size_t f = 0; f < config.frames; ++f) {
    double t = static_cast<double>(f) / denom;
    double cx = x0 + m.dx_total * t;
    double cy = y0 + m.dy_total * t;
    double r = r0 * (1.0 + (m.scale_end - 1.0) * t);
    for (std::size_t y = 0; y < config.frame_size; ++y)
      for (std::size_t x = 0; x < config.frame_size; ++x) {
        double dx = static_cast<double>(x) + 0.5 - cx;
        double dy = static_cast<double>(y) + 0.5 - cy;
        if (!inside_shape(entity, dx, dy, r)) continue;
        v.at(0, f, y, x) = static_cast<double>(static_cast<float>(col.r));
        v.at(1, f, y, x) = static_cast<double>(static_cast<float>(col.g));
        v.at(2, f, y, x) = static_cast<double>(static_cast<float>(col.b));
      }
  }
  return v;
}

SynthDataset generate_synth_dataset(const SynthConfig& config, std::uint64_t seed) {
  validate(config);
  std::vector<std::string> entities = synth_entity_names(config.num_entities);
  std::vector<std::string> actions = synth_action_names(config.num_actions);

  SynthDataset ds;
  ds.config = config;
  ds.seed = seed;
  RngStream base(seed);

  for (std::size_t i = 0; i < config.num_videos; ++i) {
    std::size_t entity = i % config.num_entities;
    std::size_t action = (i / config.num_entities) % config.num_actions;
    ds.entity_of.push_back(entity);
    ds.action_of.push_back(action);
    std::string id = synth_video_id(i);

    RngStream qa = base.derive("qa", i);
    QASample s;
    s.video_path = "videos/" + id + ".vten";
    s.entity_label = entities[entity];
    s.action_label = actions[action];

    std::size_t family = i % 3;
    bool entity_target = false;
    if (family == 0) {
      s.question_type = "entity";
      s.question = "what is in the video";
      entity_target = true;
    } else if (family == 1) {
      s.question_type = "action";
      s.question = "what is the thing doing";
    } else {
      s.question_type = "composition";
      if ((i / 3) % 2 == 0) {
        s.question = "what is the " + s.entity_label + " doing";
      } else {
        s.question = "which shape does " + s.action_label;
        entity_target = true;
      }
    }

    const std::vector<std::string>& classes = entity_target ? entities : actions;
    std::size_t truth = entity_target ? entity : action;
    std::vector<std::size_t> pool;
    if (classes.size() <= 5) {
      pool.resize(classes.size());
      for (std::size_t k = 0; k < classes.size(); ++k) pool[k] = k;
    } else {
      // truth + 4 distractors drawn without replacement
      std::vector<std::size_t> others;
      for (std::size_t k = 0; k < classes.size(); ++k)
        if (k != truth) others.push_back(k);
      qa.shuffle(others);
      pool = {truth, others[0], others[1], others[2], others[3]};
    }
    qa.shuffle(pool);
    for (std::size_t k = 0; k < pool.size(); ++k) {
      s.candidates.push_back(classes[pool[k]]);
      if (pool[k] == truth) s.answer_index = static_cast<int>(k);
    }
    ds.samples.push_back(std::move(s));

    ds.captions.push_back(
        {id, "entity", fill_template(kEntityCaptionTemplate, entities[entity])});
    ds.captions.push_back(
        {id, "action", fill_template(kActionCaptionTemplate, actions[action])});
  }
  return ds;
}

}  // namespace vidqa
