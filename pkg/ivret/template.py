"""Report templating

ivret renders its console summaries with Jinja2.

Added filters:
 * json
 * fmt (fixed precision numbers)
"""
import json

import jinja2


def fmt(value, digits=2):
    if isinstance(value, float):
        return '{:.{}f}'.format(value, digits)
    return str(value)


def create_template_env(pkgs=('ivret',)):
    loaders = [jinja2.PackageLoader(pkg, 'templates') for pkg in pkgs]
    template_env = jinja2.Environment(
        loader=jinja2.ChoiceLoader(loaders),
        extensions=['jinja2.ext.loopcontrols'],
        keep_trailing_newline=True,
        undefined=jinja2.StrictUndefined,
    )
    template_env.filters['json'] = lambda value: json.dumps(value, sort_keys=True)
    template_env.filters['fmt'] = fmt
    return template_env


def render(name, **context):
    return create_template_env().get_template(name).render(**context)
