use super::{Observation, Scene, SceneError, SceneParts, MIN_POINTS_PER_VIEW, MIN_VIEWS_PER_POINT};

/// A scene restricted to a subset of views, with maps from the dense new
/// indices back to the original ones.
#[derive(Debug, Clone, PartialEq)]
pub struct SubScene {
    pub scene: Scene,
    /// `view_map[new] = original`.
    pub view_map: Vec<usize>,
    /// `point_map[new] = original`.
    pub point_map: Vec<usize>,
    /// `observation_map[new] = original` observation index.
    pub observation_map: Vec<usize>,
}

/// Restricts `scene` to `views` (kept in the given order).
///
/// Points left with fewer than two observing views are dropped, then views
/// left with fewer than two points, repeating until both constraints hold.
pub fn subsample_views(scene: &Scene, views: &[usize]) -> Result<SubScene, SceneError> {
    if views.is_empty() {
        return Err(SceneError::InvalidSubset("empty view list".into()));
    }
    let mut keep_view = vec![false; scene.num_views()];
    for &v in views {
        if v >= scene.num_views() {
            return Err(SceneError::InvalidSubset(format!("view {v} out of range")));
        }
        if keep_view[v] {
            return Err(SceneError::InvalidSubset(format!("view {v} listed twice")));
        }
        keep_view[v] = true;
    }
    let mut keep_point = vec![true; scene.num_points()];
    let obs = scene.observations();
    loop {
        let mut views_per_point = vec![0usize; scene.num_points()];
        let mut points_per_view = vec![0usize; scene.num_views()];
        for o in obs {
            if keep_view[o.view] && keep_point[o.point] {
                views_per_point[o.point] += 1;
                points_per_view[o.view] += 1;
            }
        }
        let mut changed = false;
        for (j, &c) in views_per_point.iter().enumerate() {
            if keep_point[j] && c < MIN_VIEWS_PER_POINT {
                keep_point[j] = false;
                changed = true;
            }
        }
        if !changed {
            for (i, &c) in points_per_view.iter().enumerate() {
                if keep_view[i] && c < MIN_POINTS_PER_VIEW {
                    keep_view[i] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let view_map: Vec<usize> = views.iter().copied().filter(|&v| keep_view[v]).collect();
    let point_map: Vec<usize> = (0..scene.num_points()).filter(|&j| keep_point[j]).collect();
    if view_map.is_empty() || point_map.is_empty() {
        return Err(SceneError::EmptySubset);
    }
    let mut new_view = vec![usize::MAX; scene.num_views()];
    for (new, &old) in view_map.iter().enumerate() {
        new_view[old] = new;
    }
    let mut new_point = vec![usize::MAX; scene.num_points()];
    for (new, &old) in point_map.iter().enumerate() {
        new_point[old] = new;
    }
    // Observations ordered by new view, then by original order.
    let mut observation_map = Vec::new();
    let mut observations = Vec::new();
    for &old_view in &view_map {
        for &k in scene.pattern().observations_in_view(old_view) {
            let o = obs[k];
            if keep_point[o.point] {
                observation_map.push(k);
                observations.push(Observation {
                    view: new_view[o.view],
                    point: new_point[o.point],
                    x: o.x,
                    y: o.y,
                });
            }
        }
    }
    let scene = Scene::new(SceneParts {
        num_views: view_map.len(),
        num_points: point_map.len(),
        mode: scene.mode(),
        observations,
        intrinsics: scene
            .intrinsics()
            .map(|k| view_map.iter().map(|&v| k[v]).collect()),
        gt_poses: scene
            .gt_poses()
            .map(|p| view_map.iter().map(|&v| p[v]).collect()),
        gt_points: scene
            .gt_points()
            .map(|x| point_map.iter().map(|&j| x[j]).collect()),
    })?;
    Ok(SubScene {
        scene,
        view_map,
        point_map,
        observation_map,
    })
}
