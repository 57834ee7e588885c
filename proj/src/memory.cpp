#include "qpm/memory.hpp"

#include <istream>
#include <ostream>

#include "qpm/io.hpp"
#include "qpm/protogen.hpp"

namespace qpm {

UnitEmbedding refresh_blend(const UnitEmbedding& old_embedding,
                            const UnitEmbedding& fresh, double refresh_ratio) {
  if (refresh_ratio < 0.0 || refresh_ratio > 1.0)
    throw InvalidConfig("refresh ratio must be in [0, 1]");
  if (refresh_ratio == 0.0) return old_embedding;
  if (refresh_ratio == 1.0) return fresh;
  if (old_embedding.values.size() != fresh.values.size())
    throw DimensionMismatch("refresh_blend: dimension mismatch");
  Vec blended(old_embedding.values.size());
  for (std::size_t i = 0; i < blended.size(); ++i)
    blended[i] = (1.0 - refresh_ratio) * old_embedding.values[i] +
                 refresh_ratio * fresh.values[i];
  return l2_normalize(blended);
}

PrototypeMemory::PrototypeMemory(std::size_t capacity, double refresh_ratio,
                                 std::uint64_t ui_period, std::size_t dim)
    : capacity_(capacity), refresh_ratio_(refresh_ratio), ui_period_(ui_period), dim_(dim) {
  if (capacity_ == 0) throw InvalidConfig("memory capacity must be positive");
  if (refresh_ratio_ < 0.0 || refresh_ratio_ > 1.0)
    throw InvalidConfig("refresh ratio must be in [0, 1]");
  if (ui_period_ == 0) throw InvalidConfig("ui period must be positive");
  if (dim_ == 0) throw InvalidConfig("dimension must be positive");
}

void PrototypeMemory::check_dim(const UnitEmbedding& e) const {
  if (e.values.size() != dim_)
    throw DimensionMismatch("prototype dimension " + std::to_string(e.values.size()) +
                            " does not match memory dimension " + std::to_string(dim_));
}

void PrototypeMemory::insert_new(ClassId class_id, const UnitEmbedding& proto) {
  if (by_class_.size() >= capacity_) {
    auto oldest = by_stamp_.begin();
    by_class_.erase(oldest->second);
    by_stamp_.erase(oldest);
  }
  std::uint64_t stamp = next_stamp_++;
  by_class_.emplace(class_id, PrototypeSlot{class_id, proto, stamp});
  by_stamp_.emplace(stamp, class_id);
}

void PrototypeMemory::enqueue(ClassId class_id, const UnitEmbedding& proto) {
  check_dim(proto);
  auto it = by_class_.find(class_id);
  if (it != by_class_.end()) {
    refresh(class_id, proto);
    return;
  }
  insert_new(class_id, proto);
}

void PrototypeMemory::refresh(ClassId class_id, const UnitEmbedding& fresh) {
  check_dim(fresh);
  auto it = by_class_.find(class_id);
  if (it == by_class_.end())
    throw UnknownClass("refresh: class " + std::to_string(class_id) + " not in memory");
  it->second.embedding = refresh_blend(it->second.embedding, fresh, refresh_ratio_);
  by_stamp_.erase(it->second.stamp);
  it->second.stamp = next_stamp_++;
  by_stamp_.emplace(it->second.stamp, class_id);
}

void PrototypeMemory::dequeue_oldest(std::size_t count) {
  if (count > by_class_.size())
    throw Underflow("dequeue_oldest: count " + std::to_string(count) +
                    " exceeds size " + std::to_string(by_class_.size()));
  for (std::size_t i = 0; i < count; ++i) {
    auto oldest = by_stamp_.begin();
    by_class_.erase(oldest->second);
    by_stamp_.erase(oldest);
  }
}

std::vector<std::optional<UnitEmbedding>> PrototypeMemory::lookup(
    const std::vector<ClassId>& class_ids) const {
  std::vector<std::optional<UnitEmbedding>> out;
  out.reserve(class_ids.size());
  for (ClassId id : class_ids) {
    auto it = by_class_.find(id);
    if (it == by_class_.end())
      out.emplace_back(std::nullopt);
    else
      out.emplace_back(it->second.embedding);
  }
  return out;
}

std::vector<std::pair<ClassId, UnitEmbedding>> PrototypeMemory::negatives_snapshot(
    const std::unordered_set<ClassId>& exclude) const {
  std::vector<std::pair<ClassId, UnitEmbedding>> out;
  out.reserve(by_class_.size());
  for (const auto& [stamp, id] : by_stamp_) {
    if (exclude.count(id)) continue;
    out.emplace_back(id, by_class_.at(id).embedding);
  }
  return out;
}

bool PrototypeMemory::ui_refresh_due() const {
  if (step_counter_ % ui_period_ != 0) return false;
  return !(ui_refresh_step_ && *ui_refresh_step_ == step_counter_);
}

void PrototypeMemory::maybe_refresh_ui(const std::vector<UnitEmbedding>& unrecognizable_batch) {
  if (!ui_refresh_due()) return;
  if (unrecognizable_batch.empty())
    throw InvalidSpec("maybe_refresh_ui: empty unrecognizable batch");
  UnitEmbedding fresh = generate_prototype_basic(unrecognizable_batch);
  check_dim(fresh);
  if (ui_)
    ui_ = refresh_blend(*ui_, fresh, refresh_ratio_);
  else
    ui_ = fresh;
  ui_refresh_step_ = step_counter_;
}

void PrototypeMemory::overwrite_embedding(ClassId class_id, const UnitEmbedding& embedding) {
  check_dim(embedding);
  auto it = by_class_.find(class_id);
  if (it == by_class_.end())
    throw UnknownClass("overwrite_embedding: class " + std::to_string(class_id) +
                       " not in memory");
  it->second.embedding = embedding;
}

std::optional<std::uint64_t> PrototypeMemory::stamp_of(ClassId class_id) const {
  auto it = by_class_.find(class_id);
  if (it == by_class_.end()) return std::nullopt;
  return it->second.stamp;
}

std::vector<PrototypeSlot> PrototypeMemory::slots_by_stamp() const {
  std::vector<PrototypeSlot> out;
  out.reserve(by_class_.size());
  for (const auto& [stamp, id] : by_stamp_) out.push_back(by_class_.at(id));
  return out;
}

void PrototypeMemory::save(std::ostream& out) const {
  write_u64(out, capacity_);
  write_f64(out, refresh_ratio_);
  write_u64(out, ui_period_);
  write_u64(out, step_counter_);
  write_u64(out, dim_);
  write_u64(out, by_class_.size());
  write_u8(out, ui_ ? 1 : 0);
  for (const auto& [stamp, id] : by_stamp_) {
    const auto& slot = by_class_.at(id);
    write_i64(out, slot.class_id);
    write_u64(out, slot.stamp);
    write_f64_span(out, slot.embedding.values);
  }
  if (ui_) write_f64_span(out, ui_->values);
}

PrototypeMemory PrototypeMemory::load(std::istream& in) {
  std::uint64_t capacity = read_u64(in);
  double refresh_ratio = read_f64(in);
  std::uint64_t ui_period = read_u64(in);
  std::uint64_t step_counter = read_u64(in);
  std::uint64_t dim = read_u64(in);
  std::uint64_t num_slots = read_u64(in);
  bool has_ui = read_u8(in) != 0;
  PrototypeMemory mem(capacity, refresh_ratio, ui_period, dim);
  mem.step_counter_ = step_counter;
  if (num_slots > capacity) throw IoError("memory checkpoint: slots exceed capacity");
  for (std::uint64_t i = 0; i < num_slots; ++i) {
    ClassId id = read_i64(in);
    std::uint64_t stamp = read_u64(in);
    UnitEmbedding e{read_f64_vec(in, dim)};
    if (mem.by_class_.count(id)) throw IoError("memory checkpoint: duplicate class id");
    if (mem.by_stamp_.count(stamp)) throw IoError("memory checkpoint: duplicate stamp");
    mem.by_class_.emplace(id, PrototypeSlot{id, e, stamp});
    mem.by_stamp_.emplace(stamp, id);
    if (stamp >= mem.next_stamp_) mem.next_stamp_ = stamp + 1;
  }
  if (has_ui) mem.ui_ = UnitEmbedding{read_f64_vec(in, dim)};
  return mem;
}

}  // namespace qpm
